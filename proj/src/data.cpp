#include "ticketlab/data.hpp"

#include <cmath>
#include <fstream>

#include "ticketlab/errors.hpp"

namespace ticketlab {

void Batch::validate(std::size_t classes) const {
  if (labels.size() != inputs.rows()) {
    throw DataError("batch has " + std::to_string(inputs.rows()) +
                    " input rows but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

Batch Batch::select(const std::vector<std::size_t>& indices) const {
  Batch out;
  out.role = role;
  const std::size_t d = input_dim();
  out.inputs.shape = {indices.size(), d};
  out.inputs.data.resize(indices.size() * d);
  out.labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    for (std::size_t c = 0; c < d; ++c) {
      out.inputs.data[r * d + c] = inputs.at(src, c);
    }
    out.labels[r] = labels[src];
  }
  return out;
}

Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                   double separation, std::uint64_t seed,
                   std::size_t test_per_class) {
  if (classes < 2 || per_class == 0 || dim == 0) {
    throw ConfigError("make_blobs needs classes >= 2 and positive sizes");
  }
  if (test_per_class == 0) test_per_class = per_class;

  Dataset ds;
  ds.classes = classes;
  ds.provenance = "blobs(classes=" + std::to_string(classes) +
                  ",per_class=" + std::to_string(per_class) +
                  ",dim=" + std::to_string(dim) + ",seed=" +
                  std::to_string(seed) + ")";

  // Unit-direction centers scaled to `separation`.
  ds.blob_centers.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    RngStream rng(derive_seed(seed, {tag("centers"), c}));
    std::vector<double>& center = ds.blob_centers[c];
    center.resize(dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        center[j] = rng.normal();
        norm += center[j] * center[j];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (std::size_t j = 0; j < dim; ++j) {
      center[j] *= separation / norm;
    }
  }

  auto fill = [&](Batch& batch, std::size_t n_per_class, std::uint64_t split,
                  DataRole role) {
    batch.role = role;
    batch.inputs.shape = {classes * n_per_class, dim};
    batch.inputs.data.resize(classes * n_per_class * dim);
    batch.labels.resize(classes * n_per_class);
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      RngStream rng(derive_seed(seed, {tag("samples"), split, c}));
      for (std::size_t k = 0; k < n_per_class; ++k, ++row) {
        for (std::size_t j = 0; j < dim; ++j) {
          batch.inputs.data[row * dim + j] =
              ds.blob_centers[c][j] + rng.normal();
        }
        batch.labels[row] = static_cast<int>(c);
      }
    }
  };
  fill(ds.train, per_class, 0, DataRole::train);
  fill(ds.test, test_per_class, 1, DataRole::test);
  return ds;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw DataError("'" + path + "' truncated at byte " +
                    std::to_string(bytes.size()) + " (needed 4 bytes at " +
                    std::to_string(offset) + ")");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

}  // namespace

Batch load_idx(const std::string& images_path, const std::string& labels_path,
               std::size_t expected_classes) {
  const std::string img = read_file(images_path);
  const std::string lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kImagesMagic) {
    throw DataError("bad magic 0x" + std::to_string(img_magic) + " in '" +
                    images_path + "' at byte 0 (want 0x00000803)");
  }
  const std::uint32_t count = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  const std::size_t need = 16 + static_cast<std::size_t>(count) * pixels;
  if (img.size() < need) {
    throw DataError("'" + images_path + "' truncated at byte " +
                    std::to_string(img.size()) + " (expected " +
                    std::to_string(need) + ")");
  }

  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kLabelsMagic) {
    throw DataError("bad magic 0x" + std::to_string(lab_magic) + " in '" +
                    labels_path + "' at byte 0 (want 0x00000801)");
  }
  const std::uint32_t lab_count = read_be32(lab, 4, labels_path);
  if (lab_count != count) {
    throw DataError("image/label count mismatch: " + std::to_string(count) +
                    " vs " + std::to_string(lab_count));
  }
  if (lab.size() < 8 + static_cast<std::size_t>(count)) {
    throw DataError("'" + labels_path + "' truncated at byte " +
                    std::to_string(lab.size()));
  }

  Batch batch;
  batch.inputs.shape = {count, pixels};
  batch.inputs.data.resize(static_cast<std::size_t>(count) * pixels);
  batch.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      batch.inputs.data[i * pixels + p] =
          static_cast<unsigned char>(img[16 + i * pixels + p]) / 255.0;
    }
    const int label = static_cast<unsigned char>(lab[8 + i]);
    if (expected_classes != 0 &&
        static_cast<std::size_t>(label) >= expected_classes) {
      throw DataError("label " + std::to_string(label) + " at byte " +
                      std::to_string(8 + i) + " outside [0, " +
                      std::to_string(expected_classes) + ")");
    }
    batch.labels[i] = label;
  }
  return batch;
}

LabelNoiseResult inject_label_noise(const Dataset& dataset, double fraction,
                                    std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("label-noise fraction must lie in [0,1)");
  }
  LabelNoiseResult out;
  out.dataset = dataset;
  const std::size_t m = dataset.train.size();
  const std::size_t flips =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m)));
  if (flips == 0) return out;

  RngStream rng(derive_seed(seed, {tag("label_noise")}));
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(flips);

  const std::size_t classes = dataset.classes;
  for (std::size_t idx : order) {
    const int old_label = out.dataset.train.labels[idx];
    // Uniform over the other classes.
    std::uint64_t draw = rng.below(classes - 1);
    int new_label = static_cast<int>(draw);
    if (new_label >= old_label) ++new_label;
    out.dataset.train.labels[idx] = new_label;
  }
  out.flipped_indices = std::move(order);
  out.dataset.provenance += "+noise(" + std::to_string(fraction) + ")";
  return out;
}

}  // namespace ticketlab
