#include "multivae/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace multivae::trainer {

using nlohmann::json;

void AdamOptimizer::step(nn::ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    nn::Param& param = params.at(static_cast<Index>(p));
    auto g = param.grad.arr();
    auto m = param.adam_m.arr();
    auto v = param.adam_v.arr();
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.square();
    param.value.arr() -= lr_ * (m / bc1) / ((v / bc2).sqrt() + eps_);
  }
  params.zero_grads();
}

std::string EpochStats::to_json_line() const {
  json j{{"epoch", epoch},           {"total", total},
         {"recon_image", recon_image}, {"recon_text", recon_text},
         {"recon_traj", recon_traj},   {"kl", kl},
         {"objective", objective_kind}};
  return j.dump();
}

namespace {

void check_compatible(const model::ModelConfig& cfg, const data::Dataset& ds) {
  if (ds.manifest.vocabulary != cfg.vocabulary)
    throw ConfigError("train: dataset vocabulary differs from the model's");
  if (ds.manifest.image_size != cfg.codec.img_size)
    throw ConfigError("train: dataset image size differs from the model's");
  if (ds.manifest.t_max > cfg.codec.t_max)
    throw ConfigError("train: dataset T_max exceeds the model's");
  if (ds.manifest.l_max > cfg.codec.l_max)
    throw ConfigError("train: dataset L_max exceeds the model's");
}

objectives::ReconSpec recon_spec(const model::ModelConfig& cfg) {
  return {cfg.recon_image, cfg.recon_traj};
}

}  // namespace

TrainResult train(model::MultimodalVAE& m, AdamOptimizer& adam, const data::Dataset& ds,
                  const TrainOptions& opt) {
  const model::ModelConfig& cfg = m.config();
  check_compatible(cfg, ds);
  if (opt.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (opt.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  std::filesystem::create_directories(opt.out_dir);

  const Index n = static_cast<Index>(ds.episodes.size());
  const std::filesystem::path ckpt_path = opt.out_dir / "checkpoint.bin";
  const bool resuming = opt.start_epoch > 0;

  {
    std::ofstream meta(opt.out_dir / "run_meta.json", std::ios::trunc);
    meta << run_metadata_json(cfg, opt, ds.manifest) << "\n";
  }
  std::ofstream log(opt.out_dir / "loss_log.jsonl", resuming ? std::ios::app : std::ios::trunc);

  TrainResult result;
  for (Index epoch = opt.start_epoch; epoch < opt.start_epoch + opt.epochs; ++epoch) {
    // deterministic shuffle, stateless per epoch
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng = derive_rng(opt.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle_rng.below(i + 1))]);

    Rng noise_rng = derive_rng(opt.seed, "noise", static_cast<std::uint64_t>(epoch));
    Rng schedule_rng = derive_rng(opt.seed, "schedule", static_cast<std::uint64_t>(epoch));

    EpochStats stats;
    stats.epoch = epoch;
    stats.objective_kind = cfg.objective_kind();
    Index steps = 0;

    for (Index offset = 0; offset < n; offset += opt.batch_size) {
      const Index bsz = std::min(opt.batch_size, n - offset);
      std::vector<const model::Episode*> batch;
      batch.reserve(static_cast<std::size_t>(bsz));
      for (Index i = 0; i < bsz; ++i)
        batch.push_back(
            &ds.episodes[static_cast<std::size_t>(order[static_cast<std::size_t>(offset + i)])]);

      ad::Graph g;
      nn::ParamContext pc(g, m.params(), true);
      objectives::LossBreakdown lb;
      try {
        if (cfg.model_kind == model::ModelKind::mmvae) {
          objectives::IwaeOptions io;
          io.k = cfg.iwae_k;
          io.beta = cfg.beta;
          io.recon = recon_spec(cfg);
          io.sigma_min_sq = cfg.sigma_min_sq;
          lb = objectives::iwae_dreg(
              pc, m, std::span<const model::Episode* const>(batch.data(), batch.size()), io,
              noise_rng);
        } else {
          objectives::ElboOptions eo;
          eo.fusion = cfg.elbo_fusion();
          eo.schedule =
              fusion::subset_schedule(fusion::kNumModalities, cfg.subset_strategy(), schedule_rng);
          eo.beta = cfg.beta;
          eo.recon = recon_spec(cfg);
          eo.sigma_min_sq = cfg.sigma_min_sq;
          eo.poe_include_prior = cfg.poe_include_prior;
          eo.mopoe_include_empty = cfg.mopoe_include_empty;
          lb = objectives::multimodal_elbo(
              pc, m, std::span<const model::Episode* const>(batch.data(), batch.size()), eo,
              noise_rng);
        }
      } catch (const InvalidDistributionError& e) {
        // abort with the last-good rolling checkpoint still on disk
        log << json{{"epoch", epoch}, {"abort", e.what()}}.dump() << "\n";
        log.flush();
        throw GenerationError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(steps) + ": " + e.what() +
                              " (last-good checkpoint: " + ckpt_path.string() + ")");
      }
      g.backward(lb.total);
      pc.harvest();
      adam.step(m.params());

      stats.total += lb.total_value;
      stats.recon_image += lb.per_modality_recon.at("image");
      stats.recon_traj += lb.per_modality_recon.at("trajectory");
      stats.recon_text += lb.per_modality_recon.at("text");
      stats.kl += lb.kl;
      ++steps;
    }

    const double inv = 1.0 / static_cast<double>(steps);
    stats.total *= inv;
    stats.recon_image *= inv;
    stats.recon_traj *= inv;
    stats.recon_text *= inv;
    stats.kl *= inv;
    result.history.push_back(stats);
    log << stats.to_json_line() << "\n";
    log.flush();

    const bool last = epoch + 1 == opt.start_epoch + opt.epochs;
    if (last || (opt.checkpoint_every > 0 && (epoch + 1) % opt.checkpoint_every == 0))
      save_checkpoint(ckpt_path, m, epoch + 1, opt.seed, adam.step_count());
  }
  result.checkpoint_path = ckpt_path;
  return result;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kCkptMagic[8] = {'M', 'V', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_tensor(std::string& buf, const Tensor& t) {
  append_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) append_u32(buf, static_cast<std::uint32_t>(d));
  const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
  const std::size_t at = buf.size();
  buf.resize(at + bytes);
  std::memcpy(buf.data() + at, t.data(), bytes);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated payload");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    std::vector<Index> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(u32()));
    Tensor t(shape);
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
    need(bytes);
    std::memcpy(t.data(), buf.data() + pos, bytes);
    pos += bytes;
    return t;
  }
};

std::uint64_t checksum_bytes(const std::string& payload) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : payload) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::MultimodalVAE& m,
                     Index epoch, std::uint64_t seed, Index adam_steps) {
  std::string payload;
  append_u64(payload, seed);
  append_u64(payload, static_cast<std::uint64_t>(epoch));
  append_u64(payload, static_cast<std::uint64_t>(adam_steps));
  const std::string cfg = m.config().to_json();
  append_u32(payload, static_cast<std::uint32_t>(cfg.size()));
  payload += cfg;
  const nn::ParamStore& store = m.params();
  append_u32(payload, static_cast<std::uint32_t>(store.size()));
  for (std::size_t p = 0; p < store.size(); ++p) {
    const nn::Param& param = store.at(static_cast<Index>(p));
    append_u32(payload, static_cast<std::uint32_t>(param.name.size()));
    payload += param.name;
    append_tensor(payload, param.value);
    append_tensor(payload, param.adam_m);
    append_tensor(payload, param.adam_v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw GenerationError("save_checkpoint: cannot open " + path.string());
  out.write(kCkptMagic, 8);
  std::string header;
  append_u32(header, kCkptVersion);
  append_u64(header, static_cast<std::uint64_t>(payload.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::string tail;
  append_u64(tail, checksum_bytes(payload));
  out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
  if (!out) throw GenerationError("save_checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("load_checkpoint: cannot open " + path.string());
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 8 + 4 + 8 + 8 || std::memcmp(all.data(), kCkptMagic, 8) != 0)
    throw IntegrityError("load_checkpoint: bad magic");
  Reader hdr{all, 8};
  const std::uint32_t version = hdr.u32();
  if (version != kCkptVersion)
    throw IntegrityError("load_checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t payload_size = hdr.u64();
  if (hdr.pos + payload_size + 8 != all.size())
    throw IntegrityError("load_checkpoint: size mismatch (truncated or padded file)");
  const std::string payload = all.substr(hdr.pos, payload_size);
  Reader tail{all, hdr.pos + payload_size};
  if (tail.u64() != checksum_bytes(payload))
    throw IntegrityError("load_checkpoint: checksum mismatch");

  Reader r{payload, 0};
  LoadedCheckpoint lc;
  lc.seed = r.u64();
  lc.epoch = static_cast<Index>(r.u64());
  lc.adam_steps = static_cast<Index>(r.u64());
  const std::uint32_t cfg_len = r.u32();
  lc.config = model::ModelConfig::from_json(r.str(cfg_len));
  lc.model = std::make_unique<model::MultimodalVAE>(lc.config, lc.seed);

  const std::uint32_t n_params = r.u32();
  nn::ParamStore& store = lc.model->params();
  if (n_params != store.size())
    throw IntegrityError("load_checkpoint: parameter count mismatch");
  for (std::uint32_t p = 0; p < n_params; ++p) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const Index idx = store.find(name);
    if (idx < 0) throw IntegrityError("load_checkpoint: unknown parameter " + name);
    nn::Param& param = store.at(idx);
    Tensor value = r.tensor(), mm = r.tensor(), vv = r.tensor();
    if (!value.same_shape(param.value))
      throw IntegrityError("load_checkpoint: shape mismatch for " + name);
    param.value = std::move(value);
    param.adam_m = std::move(mm);
    param.adam_v = std::move(vv);
  }
  return lc;
}

std::string run_metadata_json(const model::ModelConfig& cfg, const TrainOptions& opt,
                              const data::Manifest& manifest) {
  json j{{"model", json::parse(cfg.to_json())},
         {"objective", cfg.objective_kind()},
         {"optimizer",
          {{"method", "adam"},
           {"step_size", opt.step_size},
           {"beta1", 0.9},
           {"beta2", 0.999},
           {"eps", 1e-8}}},
         {"epochs", opt.epochs},
         {"batch_size", opt.batch_size},
         {"seed", opt.seed},
         {"start_epoch", opt.start_epoch},
         {"dataset", {{"name", manifest.config.name}, {"seed", manifest.seed}, {"n", manifest.n}}}};
  return j.dump(2);
}

}  // namespace multivae::trainer
