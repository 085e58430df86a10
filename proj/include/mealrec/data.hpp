#pragma once

#include "mealrec/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mealrec::data {

/// Input file is malformed; the message names the file and line when known.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;

  bool operator==(const InteractionRecord&) const = default;
};

/// Reads the `user_id<TAB>item_id<TAB>timestamp` TSV format.
std::vector<InteractionRecord> parse_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, std::span<const InteractionRecord> records);

/// Largest subset in which every user and every item has at least `core`
/// interactions. Record order is preserved.
std::vector<InteractionRecord> four_core_filter(std::span<const InteractionRecord> records,
                                                int core = 4);

/// Per-item multimodal features, keyed by item id. Values are always exactly
/// representable as 32-bit floats so the binary format round-trips.
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(std::vector<std::string> ids, int frames, Mat global, Mat frame_rows, Mat text);

  int frames() const { return frames_; }
  int visual_dim() const { return static_cast<int>(global_.cols()); }
  int text_dim() const { return static_cast<int>(text_.cols()); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t row(const std::string& id) const;

  /// N x d_v global visuals, (N*K) x d_v frames, N x d_h text, in id order.
  const Mat& global() const { return global_; }
  const Mat& frame_rows() const { return frames_rows_; }
  const Mat& text() const { return text_; }
  Mat& global() { return global_; }
  Mat& frame_rows() { return frames_rows_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  int frames_ = 0;
  Mat global_;
  Mat frames_rows_;
  Mat text_;
};

/// Writes <dir>/<stem>.json plus global/frames/text float32 binaries.
std::filesystem::path save_features(const FeatureStore& store, const std::filesystem::path& dir,
                                    const std::string& stem = "features");
FeatureStore load_features(const std::filesystem::path& manifest_path);

struct UserSplit {
  std::string user_id;
  std::vector<int> train;  // most recent max_len training items, oldest first
  int valid = 0;
  int test = 0;
};

/// Leave-one-out split over a contiguous item vocabulary 1..N (0 = padding).
struct SplitDataset {
  std::vector<std::string> items;  // items[i - 1] is the id of item index i
  std::unordered_map<std::string, int> item_index;
  std::vector<UserSplit> users;
  int max_len = 10;

  int num_items() const { return static_cast<int>(items.size()); }
};

SplitDataset leave_one_out_split(std::span<const InteractionRecord> records, int max_len);

/// Dense feature rows aligned with a SplitDataset's item indices; row 0 is zero.
struct FeatureTable {
  int frames = 0;
  Mat global;  // (N+1) x d_v
  Mat frames_rows;  // ((N+1)*K) x d_v
  Mat text;    // (N+1) x d_h
};

FeatureTable align_features(const FeatureStore& store, const SplitDataset& dataset);

struct SynthConfig {
  int users = 500;
  int items = 300;
  int frames = 5;
  int visual_dim = 32;
  int text_dim = 16;
  int clusters = 8;
  int min_len = 6;
  int max_len = 12;
  double noise = 0.2;  // probability that a step ignores the user's preference
  double drift = 0.1;  // per-step probability that the preferred cluster changes
  double popularity_skew = 0.5;  // Zipf exponent of item popularity within a cluster
};

struct SynthData {
  std::vector<InteractionRecord> records;
  FeatureStore store;
  std::vector<int> item_cluster;  // dominant cluster per store row
};

SynthData synth_generate(const SynthConfig& cfg, std::uint64_t seed);

/// Adds sigma * N(0, 1) to every global and frame entry; text is untouched.
FeatureStore inject_noise(const FeatureStore& store, double sigma, std::uint64_t seed);

}  // namespace mealrec::data
