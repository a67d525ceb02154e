#pragma once

// Synthetic temporal-action sequences standing in for backbone features.
//
// Background frames are N(0, I_D). A frame inside an interval of class k is
// N(s * mu_k, I_D), where mu_1..mu_K are unit directions drawn from the seed.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gaf/tensor.hpp"

namespace gaf {

struct ActionInterval {
  int start = 0;  // inclusive frame
  int end = 0;    // exclusive frame
  int class_id = 1;

  int length() const { return end - start; }
  bool operator==(const ActionInterval&) const = default;
};

struct FeatureSequence {
  std::string seq_id;
  std::size_t T = 0;
  std::size_t D = 0;
  std::vector<double> features;  // T x D row-major
  std::vector<ActionInterval> intervals;
  std::vector<int> fg_mask;  // length T, 1 inside any interval

  Tensor feature_tensor() const { return Tensor::from({T, D}, features); }
  bool operator==(const FeatureSequence&) const = default;
};

struct DatasetSpec {
  std::size_t num_sequences = 250;
  std::size_t num_eval = 50;  // trailing sequences written to the eval split
  std::size_t T = 128;
  std::size_t D = 16;
  int K = 5;
  int min_length = 8;
  int max_length = 32;
  int min_intervals = 1;
  int max_intervals = 3;
  double snr = 3.0;
  std::uint64_t seed = 0;

  // Throws InfeasibleSpecError / ContractError.
  void validate() const;
};

// Unit-norm class directions, row k-1 for class k (K x D). Pairwise dot <= 0.3.
std::vector<std::vector<double>> class_directions(const DatasetSpec& spec);

std::vector<FeatureSequence> generate(const DatasetSpec& spec);

// Throws ContractError when fg_mask and intervals disagree or intervals overlap.
void validate_sequence(const FeatureSequence& seq);

void write_dataset(std::ostream& out, const std::vector<FeatureSequence>& seqs);
std::vector<FeatureSequence> read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const std::vector<FeatureSequence>& seqs);
std::vector<FeatureSequence> read_dataset(const std::filesystem::path& path);

std::string dataset_spec_to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

}  // namespace gaf
