#include "mealrec/data.hpp"

#include "mealrec/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mealrec::data {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "feature binaries are little-endian float32; add byte swapping for this host");

namespace {

constexpr const char* kHeader = "user_id\titem_id\ttimestamp";

float to_float(double x) { return static_cast<float>(x); }

Mat round_to_float(Mat m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(to_float(m.data()[i]));
  return m;
}

void write_floats(const fs::path& path, const Mat& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = to_float(m.data()[i]);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Mat read_floats(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw FormatError("cannot read feature file " + path.string());
  const auto expected = static_cast<std::uintmax_t>(rows * cols) * sizeof(float);
  if (bytes != expected) {
    throw FormatError("feature file " + path.string() + " has " + std::to_string(bytes) +
                      " bytes, manifest implies " + std::to_string(expected));
  }
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read on " + path.string());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
  return m;
}

}  // namespace

std::vector<InteractionRecord> parse_interactions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interactions file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw FormatError(path.string() + ": unknown header '" + line + "'");
  std::vector<InteractionRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    InteractionRecord r;
    r.user_id = line.substr(0, t1);
    r.item_id = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string ts = line.substr(t2 + 1);
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), r.timestamp);
    if (ec != std::errc() || ptr != ts.data() + ts.size() || r.timestamp < 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad timestamp '" + ts + "'");
    }
    if (r.user_id.empty() || r.item_id.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty id");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_interactions(const fs::path& path, std::span<const InteractionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kHeader << '\n';
  for (const auto& r : records) out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << '\n';
}

std::vector<InteractionRecord> four_core_filter(std::span<const InteractionRecord> records, int core) {
  std::vector<InteractionRecord> current(records.begin(), records.end());
  while (true) {
    std::unordered_map<std::string, int> users, items;
    for (const auto& r : current) {
      ++users[r.user_id];
      ++items[r.item_id];
    }
    std::vector<InteractionRecord> next;
    next.reserve(current.size());
    for (auto& r : current) {
      if (users[r.user_id] >= core && items[r.item_id] >= core) next.push_back(std::move(r));
    }
    if (next.size() == current.size()) return next;
    current = std::move(next);
  }
}

FeatureStore::FeatureStore(std::vector<std::string> ids, int frames, Mat global, Mat frame_rows, Mat text)
    : ids_(std::move(ids)), frames_(frames), global_(std::move(global)),
      frames_rows_(std::move(frame_rows)), text_(std::move(text)) {
  const auto n = static_cast<Eigen::Index>(ids_.size());
  if (frames_ < 1 || global_.rows() != n || text_.rows() != n || frames_rows_.rows() != n * frames_ ||
      frames_rows_.cols() != global_.cols()) {
    throw std::invalid_argument("FeatureStore: inconsistent dimensions");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw std::invalid_argument("FeatureStore: duplicate id " + ids_[i]);
  }
}

std::size_t FeatureStore::row(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no features for item " + id);
  return it->second;
}

fs::path save_features(const FeatureStore& store, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  const std::string global_file = stem + "_global.f32";
  const std::string frames_file = stem + "_frames.f32";
  const std::string text_file = stem + "_text.f32";
  write_floats(dir / global_file, store.global());
  write_floats(dir / frames_file, store.frame_rows());
  write_floats(dir / text_file, store.text());
  nlohmann::json manifest = {{"items", store.ids()},         {"K", store.frames()},
                             {"d_v", store.visual_dim()},     {"d_h", store.text_dim()},
                             {"global_file", global_file},    {"frames_file", frames_file},
                             {"text_file", text_file}};
  const fs::path path = dir / (stem + ".json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest.dump(1) << '\n';
  return path;
}

FeatureStore load_features(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open feature manifest " + manifest_path.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  std::vector<std::string> ids;
  int k = 0, dv = 0, dh = 0;
  fs::path global_file, frames_file, text_file;
  try {
    ids = m.at("items").get<std::vector<std::string>>();
    k = m.at("K").get<int>();
    dv = m.at("d_v").get<int>();
    dh = m.at("d_h").get<int>();
    global_file = m.at("global_file").get<std::string>();
    frames_file = m.at("frames_file").get<std::string>();
    text_file = m.at("text_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (k < 1 || dv < 1 || dh < 1) throw FormatError(manifest_path.string() + ": dimensions must be positive");
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base / p; };
  const auto n = static_cast<Eigen::Index>(ids.size());
  Mat global = read_floats(resolve(global_file), n, dv);
  Mat frames = read_floats(resolve(frames_file), n * k, dv);
  Mat text = read_floats(resolve(text_file), n, dh);
  return FeatureStore(std::move(ids), k, std::move(global), std::move(frames), std::move(text));
}

SplitDataset leave_one_out_split(std::span<const InteractionRecord> records, int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be positive");
  SplitDataset ds;
  ds.max_len = max_len;
  std::vector<std::string> item_ids;
  for (const auto& r : records) item_ids.push_back(r.item_id);
  std::sort(item_ids.begin(), item_ids.end());
  item_ids.erase(std::unique(item_ids.begin(), item_ids.end()), item_ids.end());
  ds.items = item_ids;
  for (std::size_t i = 0; i < item_ids.size(); ++i) ds.item_index[item_ids[i]] = static_cast<int>(i) + 1;

  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < records.size(); ++i) by_user[records[i].user_id].push_back(i);
  for (auto& [user, rows] : by_user) {
    if (rows.size() < 3) {
      throw std::invalid_argument("user " + user + " has fewer than 3 interactions");
    }
    // Equal timestamps keep file order.
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    UserSplit split;
    split.user_id = user;
    const std::size_t n = rows.size();
    split.test = ds.item_index.at(records[rows[n - 1]].item_id);
    split.valid = ds.item_index.at(records[rows[n - 2]].item_id);
    const std::size_t train_n = n - 2;
    const std::size_t begin = train_n > static_cast<std::size_t>(max_len) ? train_n - max_len : 0;
    for (std::size_t i = begin; i < train_n; ++i) split.train.push_back(ds.item_index.at(records[rows[i]].item_id));
    ds.users.push_back(std::move(split));
  }
  return ds;
}

FeatureTable align_features(const FeatureStore& store, const SplitDataset& dataset) {
  const int n = dataset.num_items();
  const int k = store.frames();
  FeatureTable table;
  table.frames = k;
  table.global = Mat::Zero(n + 1, store.visual_dim());
  table.frames_rows = Mat::Zero(static_cast<Eigen::Index>(n + 1) * k, store.visual_dim());
  table.text = Mat::Zero(n + 1, store.text_dim());
  for (int i = 1; i <= n; ++i) {
    const std::string& id = dataset.items[static_cast<std::size_t>(i - 1)];
    if (!store.contains(id)) throw std::out_of_range("missing features for item " + id);
    const auto r = static_cast<Eigen::Index>(store.row(id));
    table.global.row(i) = store.global().row(r);
    table.frames_rows.middleRows(static_cast<Eigen::Index>(i) * k, k) = store.frame_rows().middleRows(r * k, k);
    table.text.row(i) = store.text().row(r);
  }
  return table;
}

namespace {

std::string padded_id(char prefix, int i, int count) {
  const int width = static_cast<int>(std::to_string(std::max(count - 1, 0)).size());
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') + digits;
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.users < 1 || cfg.items < 1 || cfg.frames < 1 || cfg.visual_dim < 1 || cfg.text_dim < 1 ||
      cfg.clusters < 1 || cfg.min_len < 1 || cfg.max_len < cfg.min_len) {
    throw std::invalid_argument("synth: sizes must be positive and min_len <= max_len");
  }
  Rng rng = make_stream(seed, "synth");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int c = cfg.clusters, k = cfg.frames, dv = cfg.visual_dim, dh = cfg.text_dim;

  Mat centroids = gaussian(c, dv, rng);
  Mat text_map = gaussian(dv, dh, rng) / std::sqrt(static_cast<double>(dv));

  std::vector<int> dominant(static_cast<std::size_t>(cfg.items));
  for (int i = 0; i < cfg.items; ++i) dominant[static_cast<std::size_t>(i)] = i % c;
  std::shuffle(dominant.begin(), dominant.end(), rng);

  Mat global(cfg.items, dv), frames(static_cast<Eigen::Index>(cfg.items) * k, dv), text(cfg.items, dh);
  std::uniform_int_distribution<int> pick_cluster(0, c - 1);
  for (int i = 0; i < cfg.items; ++i) {
    const int a = dominant[static_cast<std::size_t>(i)];
    int b = a;
    if (c > 1 && unit(rng) < 0.5) {
      while (b == a) b = pick_cluster(rng);
    }
    const double drift = 0.8 * unit(rng);
    Mat identity = 0.5 * gaussian(1, dv, rng);
    for (int f = 0; f < k; ++f) {
      const double progress = k == 1 ? 0.0 : static_cast<double>(f) / (k - 1);
      const double w = 1.0 - drift * progress;
      frames.row(static_cast<Eigen::Index>(i) * k + f) =
          w * centroids.row(a) + (1.0 - w) * centroids.row(b) + identity + 0.3 * gaussian(1, dv, rng);
    }
    global.row(i) = frames.middleRows(static_cast<Eigen::Index>(i) * k, k).colwise().mean();
    text.row(i) = centroids.row(a) * text_map + 0.3 * gaussian(1, dh, rng);
  }

  // Popularity within each cluster follows a Zipf law over a random ranking.
  std::vector<std::vector<int>> members(static_cast<std::size_t>(c));
  for (int i = 0; i < cfg.items; ++i) members[static_cast<std::size_t>(dominant[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<double> weight(static_cast<std::size_t>(cfg.items));
  for (auto& group : members) {
    std::shuffle(group.begin(), group.end(), rng);
    for (std::size_t r = 0; r < group.size(); ++r) {
      weight[static_cast<std::size_t>(group[r])] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.popularity_skew);
    }
  }

  SynthData out;
  std::vector<std::string> item_ids(static_cast<std::size_t>(cfg.items));
  for (int i = 0; i < cfg.items; ++i) item_ids[static_cast<std::size_t>(i)] = padded_id('i', i, cfg.items);
  std::uniform_int_distribution<int> pick_len(cfg.min_len, cfg.max_len);
  const std::int64_t epoch = 1'600'000'000;
  for (int u = 0; u < cfg.users; ++u) {
    const std::string user = padded_id('u', u, cfg.users);
    const int len = pick_len(rng);
    int preferred = pick_cluster(rng);
    std::vector<char> seen(static_cast<std::size_t>(cfg.items), 0);
    for (int s = 0; s < len; ++s) {
      if (s > 0 && unit(rng) < cfg.drift) preferred = pick_cluster(rng);
      const int cluster = unit(rng) < cfg.noise ? pick_cluster(rng) : preferred;
      const auto& group = members[static_cast<std::size_t>(cluster)];
      double total = 0.0;
      for (int i : group) total += seen[static_cast<std::size_t>(i)] ? 0.0 : weight[static_cast<std::size_t>(i)];
      const bool allow_repeat = total <= 0.0;
      if (allow_repeat) {
        for (int i : group) total += weight[static_cast<std::size_t>(i)];
      }
      double x = unit(rng) * total;
      int chosen = -1;
      for (int i : group) {
        if (!allow_repeat && seen[static_cast<std::size_t>(i)]) continue;
        chosen = i;  // rounding can leave x >= 0 after the last eligible item
        x -= weight[static_cast<std::size_t>(i)];
        if (x < 0.0) {
          chosen = i;
          break;
        }
      }
      seen[static_cast<std::size_t>(chosen)] = 1;
      out.records.push_back({user, item_ids[static_cast<std::size_t>(chosen)],
                             epoch + static_cast<std::int64_t>(u) * 7 + static_cast<std::int64_t>(s) * 3600});
    }
  }
  out.store = FeatureStore(std::move(item_ids), k, round_to_float(std::move(global)),
                           round_to_float(std::move(frames)), round_to_float(std::move(text)));
  out.item_cluster = std::move(dominant);
  return out;
}

FeatureStore inject_noise(const FeatureStore& store, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("inject_noise: sigma must be >= 0");
  FeatureStore noisy = store;
  if (sigma == 0.0) return noisy;
  Rng rng = make_stream(seed, "feature-noise");
  noisy.global() = round_to_float(store.global() + sigma * gaussian(store.global().rows(), store.global().cols(), rng));
  noisy.frame_rows() = round_to_float(
      store.frame_rows() + sigma * gaussian(store.frame_rows().rows(), store.frame_rows().cols(), rng));
  return noisy;
}

}  // namespace mealrec::data
