#include "mealrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mealrec::training {

TimestepSampling parse_timestep_sampling(const std::string& name) {
  if (name == "uniform_1_to_T") return TimestepSampling::uniform_1_to_T;
  if (name == "fixed_set") return TimestepSampling::fixed_set;
  throw std::invalid_argument("unknown t_sampling '" + name + "'");
}

std::string to_string(TimestepSampling s) {
  return s == TimestepSampling::fixed_set ? "fixed_set" : "uniform_1_to_T";
}

diffusion::Schedule make_schedule(const TrainConfig& cfg) {
  return diffusion::make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.beta_rescale);
}

int sample_timestep(int steps, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("sample_timestep: T must be >= 1");
  return std::uniform_int_distribution<int>(1, steps)(rng);
}

int sample_timestep(TimestepSampling mode, int steps, Rng& rng) {
  if (mode == TimestepSampling::uniform_1_to_T) return sample_timestep(steps, rng);
  std::vector<int> choices;
  for (int t : {5, 10, 15, 20, 25}) {
    if (t <= steps) choices.push_back(t);
  }
  if (choices.empty()) return steps;
  return choices[static_cast<std::size_t>(
      std::uniform_int_distribution<int>(0, static_cast<int>(choices.size()) - 1)(rng))];
}

double rec_loss(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw std::out_of_range("rec_loss: target outside vocabulary");
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  return -(scores[target] - mx - std::log(sum));
}

std::vector<Example> training_examples(const data::SplitDataset& dataset) {
  std::vector<Example> out;
  for (std::size_t u = 0; u < dataset.users.size(); ++u) {
    const auto& train = dataset.users[u].train;
    for (std::size_t j = 1; j < train.size(); ++j) {
      Example ex;
      ex.user = u;
      ex.history.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(j));
      ex.target = train[j];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

int effective_batch_size(const TrainConfig& cfg, std::size_t examples) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  const std::size_t per_epoch = static_cast<std::size_t>(std::max(1, cfg.min_batches_per_epoch));
  const std::size_t scaled = (examples + per_epoch - 1) / per_epoch;
  return static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(cfg.batch_size, scaled)));
}

DiffusionDraws draw_diffusion(const Batch& batch, const ModelConfig& model, const TrainConfig& cfg, Rng& rng) {
  DiffusionDraws d;
  for (int i = 0; i < batch.size; ++i) {
    d.tcd_steps.push_back(sample_timestep(cfg.t_sampling, cfg.steps, rng));
    d.npd_steps.push_back(sample_timestep(cfg.t_sampling, cfg.steps, rng));
  }
  d.tcd_eps = gaussian(static_cast<Eigen::Index>(batch.size) * model.tcd.frames, model.tcd.dim, rng);
  d.npd_eps = gaussian(batch.size, model.npd.dim, rng);
  return d;
}

LossParts total_loss(Model& model, ad::Tape& tape, const Batch& batch, const diffusion::Schedule& sched,
                     const TrainConfig& cfg, Rng& diffusion_rng, Rng* dropout_rng, ad::Var* total) {
  DiffusionDraws draws = draw_diffusion(batch, model.config(), cfg, diffusion_rng);
  draws.chain_rng = &diffusion_rng;
  nn::Dropout drop{model.config().backbone.dropout, dropout_rng};
  TrainForward fw = model.forward_train(tape, batch, sched, draws, cfg.lambda_tcd, cfg.lambda_npd, drop);
  LossParts parts;
  parts.total = fw.total.value()(0, 0);
  parts.rec = fw.rec.value()(0, 0);
  if (fw.tcd.valid()) parts.tcd = fw.tcd.value()(0, 0);
  if (fw.npd.valid()) parts.npd = fw.npd.value()(0, 0);
  if (total != nullptr) *total = fw.total;
  return parts;
}

Adam::Adam(const ParamStore& params, const TrainConfig& cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Mat::Zero(params[i].value.rows(), params[i].value.cols()));
    v_.push_back(Mat::Zero(params[i].value.rows(), params[i].value.cols()));
  }
}

double Adam::step(ParamStore& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) sq += params[i].grad.squaredNorm();
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Mat g = p.grad * clip;
    m_[i] = cfg_.adam_beta1 * m_[i] + (1.0 - cfg_.adam_beta1) * g;
    v_[i] = cfg_.adam_beta2 * v_[i] + (1.0 - cfg_.adam_beta2) * g.cwiseAbs2();
    p.value.array() -= cfg_.learning_rate * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + cfg_.adam_eps);
  }
  return norm;
}

nlohmann::json to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},       {"L_total", log.total},         {"L_R", log.rec},
          {"L_T", log.tcd},           {"L_N", log.npd},               {"val_HR@10", log.val_hr10},
          {"val_N@10", log.val_ndcg10}, {"wall_seconds", log.wall_seconds}};
}

FitResult fit(const data::SplitDataset& dataset, const data::FeatureTable& features, const ModelConfig& model_cfg,
              const TrainConfig& cfg, const eval::EvalOptions& eval_options, const EpochCallback& on_epoch) {
  std::vector<Example> examples = training_examples(dataset);
  if (examples.empty()) throw std::invalid_argument("fit: training split is empty");
  if (std::find(eval_options.ks.begin(), eval_options.ks.end(), 10) == eval_options.ks.end()) {
    throw std::invalid_argument("fit: validation needs k = 10 among the cutoffs");
  }
  if (model_cfg.tcd.steps != cfg.steps) throw std::invalid_argument("fit: TCD step table differs from T");
  const diffusion::Schedule sched = make_schedule(cfg);
  FitResult result{Model(model_cfg, derive_seed(cfg.seed, "model")), {}, 0};
  Model& model = result.model;
  Adam adam(model.params(), cfg);
  Rng shuffle_rng = make_stream(cfg.seed, "shuffle");
  Rng diffusion_rng = make_stream(cfg.seed, "diffusion");
  Rng dropout_rng = make_stream(cfg.seed, "dropout");
  const int batch_size = effective_batch_size(cfg, examples.size());

  std::vector<Mat> best;
  double best_score = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    // Length buckets keep padding small; both the bucket contents and the
    // order of batches are reshuffled every epoch.
    std::shuffle(examples.begin(), examples.end(), shuffle_rng);
    std::stable_sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
      return a.history.size() < b.history.size();
    });
    std::vector<std::size_t> starts;
    for (std::size_t b = 0; b < examples.size(); b += static_cast<std::size_t>(batch_size)) starts.push_back(b);
    std::shuffle(starts.begin(), starts.end(), shuffle_rng);
    LossParts sum;
    std::size_t seen = 0;
    for (std::size_t begin : starts) {
      const std::size_t n = std::min(static_cast<std::size_t>(batch_size), examples.size() - begin);
      Batch batch = make_batch(std::span<const Example>(examples).subspan(begin, n), features, dataset.max_len,
                               cfg.gamma);
      model.params().zero_grad();
      ad::Tape tape;
      ad::Var total;
      LossParts parts = total_loss(model, tape, batch, sched, cfg, diffusion_rng, &dropout_rng, &total);
      if (!std::isfinite(parts.total)) {
        std::ostringstream msg;
        msg << "non-finite loss: training diverged at epoch " << epoch << ", batch starting at " << begin << ": L_total="
            << parts.total << " L_R=" << parts.rec << " L_T=" << parts.tcd << " L_N=" << parts.npd;
        throw std::runtime_error(msg.str());
      }
      tape.backward(total);
      adam.step(model.params());
      const double w = static_cast<double>(n);
      sum.total += parts.total * w;
      sum.rec += parts.rec * w;
      sum.tcd += parts.tcd * w;
      sum.npd += parts.npd * w;
      seen += n;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.total = sum.total / static_cast<double>(seen);
    entry.rec = sum.rec / static_cast<double>(seen);
    entry.tcd = sum.tcd / static_cast<double>(seen);
    entry.npd = sum.npd / static_cast<double>(seen);
    eval::EvalReport val = eval::evaluate(model, dataset, features, sched, cfg.gamma, eval_options,
                                          eval::Split::validation);
    entry.val_hr10 = val.hr_at(10);
    entry.val_ndcg10 = val.ndcg_at(10);
    if (cfg.log_wall_time) {
      entry.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.val_ndcg10 > best_score) {
      best_score = entry.val_ndcg10;
      result.best_epoch = epoch;
      best.clear();
      for (std::size_t i = 0; i < model.params().size(); ++i) best.push_back(model.params()[i].value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) model.params()[i].value = best[i];
  model.params().zero_grad();
  return result;
}

namespace {

constexpr char kMagic[8] = {'M', 'L', 'R', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, config_echo.size());
  out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put<std::uint64_t>(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols()));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  Checkpoint ck;
  const auto echo_len = get<std::uint64_t>(in, path);
  ck.config_echo.resize(echo_len);
  in.read(ck.config_echo.data(), static_cast<std::streamsize>(echo_len));
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint64_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    Mat value(rows, cols);
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    ck.params.add(name, std::move(value));
  }
  return ck;
}

}  // namespace mealrec::training
