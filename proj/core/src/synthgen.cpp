#include "gaf/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gaf/errors.hpp"
#include "gaf/nn.hpp"

namespace gaf {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kMaxDirectionDot = 0.3;
constexpr int kDirectionAttempts = 100000;
constexpr std::uint64_t kDirectionStream = 100;
constexpr std::uint64_t kSequenceStreamBase = 1000;

}  // namespace

void DatasetSpec::validate() const {
  if (T == 0 || D == 0 || K < 1) throw ContractError("dataset spec: T, D and K must be positive");
  if (num_eval > num_sequences) throw ContractError("dataset spec: num_eval exceeds num_sequences");
  if (min_length < 2) throw ContractError("dataset spec: min_length must be at least 2");
  if (max_length < min_length) throw ContractError("dataset spec: max_length < min_length");
  if (min_intervals < 0 || max_intervals < min_intervals) {
    throw ContractError("dataset spec: invalid intervals-per-sequence range");
  }
  if (!(snr > 0.0)) throw ContractError("dataset spec: snr must be positive");
  if (static_cast<std::size_t>(max_intervals) * static_cast<std::size_t>(max_length) > T) {
    throw InfeasibleSpecError(fmt::format(
        "dataset spec: {} intervals of length {} cannot fit in T={}", max_intervals, max_length, T));
  }
}

std::vector<std::vector<double>> class_directions(const DatasetSpec& spec) {
  Rng rng = make_rng(spec.seed, kDirectionStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  for (int k = 0; k < spec.K; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kDirectionAttempts && !placed; ++attempt) {
      std::vector<double> v(spec.D);
      double norm = 0.0;
      for (double& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (double& x : v) x /= norm;
      placed = std::all_of(dirs.begin(), dirs.end(), [&](const std::vector<double>& u) {
        double dot = 0.0;
        for (std::size_t i = 0; i < spec.D; ++i) dot += u[i] * v[i];
        return dot <= kMaxDirectionDot;
      });
      if (placed) dirs.push_back(std::move(v));
    }
    if (!placed) {
      throw InfeasibleSpecError(
          fmt::format("cannot place {} class directions in D={} with pairwise dot <= {}", spec.K,
                      spec.D, kMaxDirectionDot));
    }
  }
  return dirs;
}

std::vector<FeatureSequence> generate(const DatasetSpec& spec) {
  spec.validate();
  const auto dirs = class_directions(spec);
  std::vector<FeatureSequence> out;
  out.reserve(spec.num_sequences);
  const int T = static_cast<int>(spec.T);

  for (std::size_t s = 0; s < spec.num_sequences; ++s) {
    Rng rng = make_rng(spec.seed, kSequenceStreamBase + s);
    FeatureSequence seq;
    seq.seq_id = fmt::format("seq-{:05d}", s);
    seq.T = spec.T;
    seq.D = spec.D;

    const int n = std::uniform_int_distribution<int>(spec.min_intervals, spec.max_intervals)(rng);
    std::uniform_int_distribution<int> len_dist(spec.min_length, spec.max_length);
    std::uniform_int_distribution<int> class_dist(1, spec.K);
    std::vector<int> lengths(n);
    int total = 0;
    for (int& l : lengths) total += (l = len_dist(rng));

    // Split the free frames into n+1 gaps with n uniform cut points.
    const int free = T - total;
    std::uniform_int_distribution<int> cut_dist(0, free);
    std::vector<int> cuts(n);
    for (int& c : cuts) c = cut_dist(rng);
    std::sort(cuts.begin(), cuts.end());
    int pos = 0, prev_cut = 0;
    for (int i = 0; i < n; ++i) {
      pos += cuts[i] - prev_cut;
      prev_cut = cuts[i];
      seq.intervals.push_back({pos, pos + lengths[i], class_dist(rng)});
      pos += lengths[i];
    }

    seq.fg_mask.assign(spec.T, 0);
    std::vector<int> frame_class(spec.T, 0);
    for (const auto& iv : seq.intervals) {
      for (int t = iv.start; t < iv.end; ++t) {
        seq.fg_mask[t] = 1;
        frame_class[t] = iv.class_id;
      }
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    seq.features.resize(spec.T * spec.D);
    for (std::size_t t = 0; t < spec.T; ++t) {
      for (std::size_t d = 0; d < spec.D; ++d) {
        double v = normal(rng);
        if (frame_class[t] > 0) v += spec.snr * dirs[frame_class[t] - 1][d];
        seq.features[t * spec.D + d] = v;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void validate_sequence(const FeatureSequence& seq) {
  if (seq.features.size() != seq.T * seq.D) {
    throw ContractError(fmt::format("{}: features hold {} values, expected {}", seq.seq_id,
                                    seq.features.size(), seq.T * seq.D));
  }
  if (seq.fg_mask.size() != seq.T) {
    throw ContractError(fmt::format("{}: fg_mask length {} != T {}", seq.seq_id,
                                    seq.fg_mask.size(), seq.T));
  }
  std::vector<int> expect(seq.T, 0);
  int prev_end = 0;
  for (const auto& iv : seq.intervals) {
    if (iv.start < 0 || iv.start >= iv.end || iv.end > static_cast<int>(seq.T)) {
      throw ContractError(fmt::format("{}: invalid interval [{}, {})", seq.seq_id, iv.start, iv.end));
    }
    if (iv.class_id < 1) throw ContractError(seq.seq_id + ": interval class must be >= 1");
    if (iv.start < prev_end) throw ContractError(seq.seq_id + ": intervals overlap or are unsorted");
    prev_end = iv.end;
    for (int t = iv.start; t < iv.end; ++t) expect[t] = 1;
  }
  if (expect != seq.fg_mask) throw ContractError(seq.seq_id + ": fg_mask disagrees with intervals");
}

// ---------------------------------------------------------------------------
// JSON lines

void write_dataset(std::ostream& out, const std::vector<FeatureSequence>& seqs) {
  for (const auto& seq : seqs) {
    ojson rec;
    rec["seq_id"] = seq.seq_id;
    rec["T"] = seq.T;
    rec["D"] = seq.D;
    rec["features"] = seq.features;
    ojson ivs = ojson::array();
    for (const auto& iv : seq.intervals) ivs.push_back({iv.start, iv.end, iv.class_id});
    rec["intervals"] = std::move(ivs);
    rec["fg_mask"] = seq.fg_mask;
    out << rec.dump() << '\n';
  }
}

std::vector<FeatureSequence> read_dataset(std::istream& in) {
  std::vector<FeatureSequence> seqs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = ojson::parse(line);
      FeatureSequence seq;
      seq.seq_id = rec.at("seq_id").get<std::string>();
      seq.T = rec.at("T").get<std::size_t>();
      seq.D = rec.at("D").get<std::size_t>();
      seq.features = rec.at("features").get<std::vector<double>>();
      for (const auto& iv : rec.at("intervals")) {
        if (!iv.is_array() || iv.size() != 3) throw ContractError("interval must be [start,end,class]");
        seq.intervals.push_back({iv[0].get<int>(), iv[1].get<int>(), iv[2].get<int>()});
      }
      seq.fg_mask = rec.at("fg_mask").get<std::vector<int>>();
      validate_sequence(seq);
      seqs.push_back(std::move(seq));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return seqs;
}

void write_dataset(const std::filesystem::path& path, const std::vector<FeatureSequence>& seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset(out, seqs);
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<FeatureSequence> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset(in);
}

std::string dataset_spec_to_json(const DatasetSpec& spec) {
  ojson j;
  j["num_sequences"] = spec.num_sequences;
  j["num_eval"] = spec.num_eval;
  j["T"] = spec.T;
  j["D"] = spec.D;
  j["K"] = spec.K;
  j["min_length"] = spec.min_length;
  j["max_length"] = spec.max_length;
  j["min_intervals"] = spec.min_intervals;
  j["max_intervals"] = spec.max_intervals;
  j["snr"] = spec.snr;
  j["seed"] = spec.seed;
  return j.dump(2);
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
  DatasetSpec spec;
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), 1);
  }
  if (!j.is_object()) throw ContractError("dataset spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_sequences") spec.num_sequences = value.get<std::size_t>();
      else if (key == "num_eval") spec.num_eval = value.get<std::size_t>();
      else if (key == "T") spec.T = value.get<std::size_t>();
      else if (key == "D") spec.D = value.get<std::size_t>();
      else if (key == "K") spec.K = value.get<int>();
      else if (key == "min_length") spec.min_length = value.get<int>();
      else if (key == "max_length") spec.max_length = value.get<int>();
      else if (key == "min_intervals") spec.min_intervals = value.get<int>();
      else if (key == "max_intervals") spec.max_intervals = value.get<int>();
      else if (key == "snr") spec.snr = value.get<double>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else throw ContractError("unknown dataset spec field '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ContractError("dataset spec field '" + key + "': " + e.what());
    }
  }
  return spec;
}

}  // namespace gaf
