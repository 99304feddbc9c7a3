#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ticketlab/rng.hpp"
#include "ticketlab/tensor.hpp"

namespace ticketlab {

// Dataflow tag. Training entry points reject anything not tagged `train`,
// so test data cannot leak into optimization or pruning.
enum class DataRole { train, test };

struct Batch {
  Tensor inputs;            // (n, d)
  std::vector<int> labels;  // class indices, length n
  DataRole role = DataRole::train;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.cols(); }

  void validate(std::size_t classes) const;

  // Row subset in the given order; keeps the role tag.
  Batch select(const std::vector<std::size_t>& indices) const;
};

struct Dataset {
  Batch train;
  Batch test;
  std::size_t classes = 0;
  std::string provenance;  // synthetic spec or file digest

  // Populated by make_blobs; empty for file-backed data.
  std::vector<std::vector<double>> blob_centers;

  std::size_t train_size() const { return train.size(); }
};

// Gaussian blobs, class-balanced, fully determined by the seed. Draws
// `per_class` training and `test_per_class` held-out points per class around
// centers of norm `separation`.
Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                   double separation, std::uint64_t seed,
                   std::size_t test_per_class = 0);

// IDX binary ingestion (big-endian dims, magic 0x803 images / 0x801 labels).
// Pixels scaled to [0,1]. `expected_classes` = 0 infers max(label)+1.
Batch load_idx(const std::string& images_path, const std::string& labels_path,
               std::size_t expected_classes = 0);

struct LabelNoiseResult {
  Dataset dataset;
  std::vector<std::size_t> flipped_indices;
};

// Replaces exactly floor(fraction * m) training labels with a uniformly
// random different class. Test split untouched.
LabelNoiseResult inject_label_noise(const Dataset& dataset, double fraction,
                                    std::uint64_t seed);

}  // namespace ticketlab
