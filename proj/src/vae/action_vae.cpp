#include "ate/vae/action_vae.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "ate/binary_io.hpp"
#include "ate/errors.hpp"

namespace ate::vae {
namespace {

using diff::check_dims;
using nlohmann::json;

constexpr char kMagic[4] = {'A', 'T', 'E', 'V'};
constexpr uint32_t kVersion = 1;
constexpr int kInferenceBatch = 256;

std::vector<int> tiled(int rows, int times) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(rows) * times);
  for (int b = 0; b < times; ++b) {
    for (int r = 0; r < rows; ++r) idx.push_back(r);
  }
  return idx;
}

json config_json(const VaeConfig& c) {
  return json{{"latent_dim", c.latent_dim}, {"chunk_len", c.chunk_len},
              {"action_dim", c.action_dim}, {"depth", c.depth},
              {"width", c.width},           {"heads", c.heads},
              {"ffn_hidden", c.ffn_hidden}, {"info_alpha", c.info_alpha},
              {"info_lambda", c.info_lambda}, {"decoder_variance", c.decoder_variance},
              {"mmd_bandwidths", c.mmd_bandwidths}};
}

VaeConfig config_from_json(const json& j) {
  VaeConfig c;
  c.latent_dim = j.at("latent_dim").get<int>();
  c.chunk_len = j.at("chunk_len").get<int>();
  c.action_dim = j.at("action_dim").get<int>();
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.info_alpha = j.at("info_alpha").get<double>();
  c.info_lambda = j.at("info_lambda").get<double>();
  c.decoder_variance = j.at("decoder_variance").get<double>();
  c.mmd_bandwidths = j.at("mmd_bandwidths").get<std::vector<double>>();
  return c;
}

}  // namespace

std::vector<double> VaeConfig::resolved_bandwidths() const {
  if (!mmd_bandwidths.empty()) return mmd_bandwidths;
  const double s = std::sqrt(static_cast<double>(latent_dim));
  return {0.25 * s, 0.5 * s, s, 2.0 * s};
}

void VaeConfig::validate() const {
  if (latent_dim <= 0) throw ConfigError("vae: latent_dim must be positive");
  if (chunk_len <= 0 || action_dim <= 0) {
    throw ConfigError("vae: chunk_len and action_dim must be positive");
  }
  if (depth <= 0 || width <= 0 || heads <= 0 || ffn_hidden <= 0) {
    throw ConfigError("vae: depth, width, heads and ffn_hidden must be positive");
  }
  if (width % heads != 0) throw ConfigError("vae: width must be divisible by heads");
  if (!std::isfinite(info_alpha) || !std::isfinite(info_lambda)) {
    throw ConfigError("vae: info coefficients must be finite");
  }
  if (!(decoder_variance > 0.0) || !std::isfinite(decoder_variance)) {
    throw ConfigError("vae: decoder_variance must be positive");
  }
  for (double h : mmd_bandwidths) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("vae: bandwidths must be positive");
  }
}

ActionVae ActionVae::create(const VaeConfig& config, ParamStore& store,
                            const std::string& prefix) {
  config.validate();
  const int w = config.width;
  ActionVae v;
  v.config_ = config;
  v.prefix_ = prefix;
  const std::string enc = prefix + ".enc";
  const std::string dec = prefix + ".dec";
  v.enc_in_ = diff::Dense::create(store, enc + ".in", config.action_dim, w);
  store.add_normal(enc + ".tokens", 2, w, 0.02);
  store.add_normal(enc + ".pos", config.chunk_len + 2, w, 0.02);
  for (int i = 0; i < config.depth; ++i) {
    v.enc_blocks_.push_back(diff::EncoderBlock::create(store, enc + ".block" + std::to_string(i),
                                                       w, config.heads, config.ffn_hidden));
  }
  v.mean_head_ = diff::Dense::create(store, enc + ".mean", w, config.latent_dim);
  v.log_var_head_ = diff::Dense::create(store, enc + ".log_var", w, config.latent_dim, 0.1);

  store.add_normal(dec + ".pos", config.chunk_len, w, 0.02);
  v.z_proj_ = diff::Dense::create(store, dec + ".z", config.latent_dim, w);
  for (int i = 0; i < config.depth; ++i) {
    v.dec_blocks_.push_back(diff::DecoderBlock::create(store, dec + ".block" + std::to_string(i),
                                                       w, config.heads, config.ffn_hidden));
  }
  v.dec_norm_ = diff::LayerNorm::create(store, dec + ".ln", w);
  v.dec_out_ = diff::Dense::create(store, dec + ".out", w, config.action_dim);
  return v;
}

ActionVae::Posterior ActionVae::encode(Tape& tape, const ParamStore& store, Var chunks,
                                       int batch) const {
  const int h = config_.chunk_len;
  check_dims(batch > 0 && chunks.rows() == static_cast<Eigen::Index>(batch) * h, "encode",
             "expected " + std::to_string(batch) + " chunks of length " + std::to_string(h) +
                 ", got " + std::to_string(chunks.rows()) + " rows");
  check_dims(chunks.cols() == config_.action_dim, "encode",
             "expected action dim " + std::to_string(config_.action_dim) + ", got " +
                 std::to_string(chunks.cols()));
  const std::string enc = prefix_ + ".enc";
  Var x = enc_in_(tape, store, chunks);
  Var parts[] = {tape.param(store, enc + ".tokens"), x};
  Var all = diff::concat_rows(parts);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(batch) * (h + 2));
  for (int b = 0; b < batch; ++b) {
    order.push_back(0);
    order.push_back(1);
    for (int t = 0; t < h; ++t) order.push_back(2 + b * h + t);
  }
  Var seq = diff::select_rows(all, std::move(order));
  seq = diff::add(seq, diff::select_rows(tape.param(store, enc + ".pos"), tiled(h + 2, batch)));
  for (const auto& block : enc_blocks_) seq = block(tape, store, seq, batch);

  std::vector<int> mu_rows, sigma_rows;
  for (int b = 0; b < batch; ++b) {
    mu_rows.push_back(b * (h + 2));
    sigma_rows.push_back(b * (h + 2) + 1);
  }
  return {mean_head_(tape, store, diff::select_rows(seq, std::move(mu_rows))),
          log_var_head_(tape, store, diff::select_rows(seq, std::move(sigma_rows)))};
}

Var ActionVae::decode(Tape& tape, const ParamStore& store, Var z, int out_len) const {
  check_dims(out_len == config_.chunk_len, "decode",
             "out_len " + std::to_string(out_len) + " differs from chunk length " +
                 std::to_string(config_.chunk_len));
  check_dims(z.cols() == config_.latent_dim, "decode",
             "expected latent dim " + std::to_string(config_.latent_dim) + ", got " +
                 std::to_string(z.cols()));
  const int batch = static_cast<int>(z.rows());
  Var memory = z_proj_(tape, store, z);
  Var q = diff::select_rows(tape.param(store, prefix_ + ".dec.pos"), tiled(out_len, batch));
  for (const auto& block : dec_blocks_) q = block(tape, store, q, memory, batch);
  return dec_out_(tape, store, dec_norm_(tape, store, q));
}

LatentGaussian ActionVae::encode(const ParamStore& store, const Matrix& chunk) const {
  return encode_many(store, {chunk}).front();
}

std::vector<LatentGaussian> ActionVae::encode_many(const ParamStore& store,
                                                   const std::vector<Matrix>& chunks) const {
  std::vector<LatentGaussian> out;
  out.reserve(chunks.size());
  for (std::size_t start = 0; start < chunks.size(); start += kInferenceBatch) {
    const std::size_t end = std::min(chunks.size(), start + kInferenceBatch);
    std::vector<Matrix> part(chunks.begin() + static_cast<std::ptrdiff_t>(start),
                             chunks.begin() + static_cast<std::ptrdiff_t>(end));
    Tape tape;
    tape.set_params_frozen(true);
    const int batch = static_cast<int>(part.size());
    Posterior p = encode(tape, store, tape.constant(stack_chunks(part)), batch);
    for (int b = 0; b < batch; ++b) {
      out.push_back({p.mean.value().row(b), p.log_var.value().row(b)});
    }
  }
  return out;
}

Matrix ActionVae::decode(const ParamStore& store, const Eigen::RowVectorXd& z,
                         int out_len) const {
  Tape tape;
  tape.set_params_frozen(true);
  Matrix zm = z;
  return decode(tape, store, tape.constant(zm), out_len).value();
}

Matrix stack_chunks(const std::vector<Matrix>& chunks) {
  if (chunks.empty()) throw UsageError("stack_chunks: no chunks");
  const Eigen::Index h = chunks.front().rows();
  const Eigen::Index d = chunks.front().cols();
  Matrix out(h * static_cast<Eigen::Index>(chunks.size()), d);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    check_dims(chunks[i].rows() == h && chunks[i].cols() == d, "stack_chunks",
               "chunk " + std::to_string(i) + " has a different shape");
    out.middleRows(static_cast<Eigen::Index>(i) * h, h) = chunks[i];
  }
  return out;
}

VaeNoise draw_vae_noise(Rng& rng, int batch, int dim) {
  VaeNoise n{Matrix(batch, dim), Matrix(batch, dim)};
  for (Eigen::Index i = 0; i < n.latent.size(); ++i) n.latent.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < n.prior_unit.size(); ++i) n.prior_unit.data()[i] = rng.normal();
  return n;
}

VaeLoss vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store, Var chunks,
                 int batch, const PriorStats& prior, const VaeNoise& noise) {
  if (batch < 2) throw UsageError("vae loss: batch size must be at least 2 for the MMD term");
  const VaeConfig& cfg = vae.config();
  ActionVae::Posterior post = vae.encode(tape, store, chunks, batch);
  Var z = reparameterize(post.mean, post.log_var, noise.latent);
  Var recon_chunks = vae.decode(tape, store, z, cfg.chunk_len);
  Var recon = diff::scale(diff::sum(diff::square(diff::sub(recon_chunks, chunks))),
                          0.5 / (cfg.decoder_variance * static_cast<double>(batch)));
  Var kl = gaussian_kl(post.mean, post.log_var, prior);
  Var mmd = mmd_biased(z, prior.transform_unit_draws(noise.prior_unit),
                       cfg.resolved_bandwidths());
  VaeLoss out;
  out.recon = recon.scalar();
  out.kl = kl.scalar();
  out.mmd = mmd.scalar();
  out.total = recon;
  if (cfg.kl_coefficient() != 0.0) {
    out.total = diff::add(out.total, diff::scale(kl, cfg.kl_coefficient()));
  }
  if (cfg.mmd_weight() != 0.0) {
    out.total = diff::add(out.total, diff::scale(mmd, cfg.mmd_weight()));
  }
  return out;
}

VaeLoss pretrain_vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store,
                          Var chunks, int batch, const VaeNoise& noise) {
  return vae_loss(tape, vae, store, chunks, batch,
                  PriorStats::standard_normal(vae.config().latent_dim), noise);
}

VaeLoss adapt_vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store, Var chunks,
                       int batch, const std::optional<PriorStats>& prior,
                       const VaeNoise& noise) {
  if (!prior) {
    throw PipelineOrderError("adaptation VAE loss needs the pre-training latent prior; "
                             "run estimate-prior first");
  }
  return vae_loss(tape, vae, store, chunks, batch, *prior, noise);
}

LatentMoments::LatentMoments(int dim)
    : mean_(Eigen::RowVectorXd::Zero(dim)), m2_(Matrix::Zero(dim, dim)) {}

void LatentMoments::add(const Eigen::RowVectorXd& z) {
  check_dims(z.size() == mean_.size(), "LatentMoments::add", "latent dim mismatch");
  ++count_;
  Eigen::RowVectorXd delta = z - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.transpose() * (z - mean_);
}

void LatentMoments::merge(const LatentMoments& other) {
  check_dims(other.mean_.size() == mean_.size(), "LatentMoments::merge", "latent dim mismatch");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  Eigen::RowVectorXd delta = other.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += other.m2_ + delta.transpose() * delta * (na * nb / n);
  count_ += other.count_;
}

Matrix LatentMoments::covariance() const {
  if (count_ == 0) throw UsageError("LatentMoments: no samples");
  Matrix cov = m2_ / static_cast<double>(count_);
  return 0.5 * (cov + cov.transpose());
}

PriorStats LatentMoments::finalize(bool diagonal, double variance_floor) const {
  PriorStats p;
  p.mean = mean_;
  p.cov = covariance();
  p.diagonal = diagonal;
  p.count = count_;
  if (diagonal) p.cov = Matrix(p.cov.diagonal().asDiagonal());
  for (Eigen::Index i = 0; i < p.cov.rows(); ++i) {
    p.cov(i, i) = std::max(p.cov(i, i), variance_floor);
  }
  return p;
}

PriorStats estimate_prior(const ActionVae& vae, const ParamStore& store,
                          const std::vector<Matrix>& chunks, uint64_t seed, bool diagonal,
                          double variance_floor, int workers, bool zero_noise) {
  if (chunks.empty()) throw UsageError("estimate_prior: empty chunk set");
  const int d = vae.config().latent_dim;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(chunks.size())));
  std::vector<LatentMoments> shards(static_cast<std::size_t>(workers), LatentMoments(d));
  const std::size_t per = (chunks.size() + workers - 1) / workers;

  auto run = [&](int w) {
    const std::size_t begin = per * static_cast<std::size_t>(w);
    const std::size_t end = std::min(chunks.size(), begin + per);
    if (begin >= end) return;
    std::vector<Matrix> part(chunks.begin() + static_cast<std::ptrdiff_t>(begin),
                             chunks.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<LatentGaussian> posts = vae.encode_many(store, part);
    for (std::size_t i = 0; i < posts.size(); ++i) {
      Eigen::RowVectorXd noise = Eigen::RowVectorXd::Zero(d);
      if (!zero_noise) {
        Rng rng(derive_seed(seed, begin + i));
        for (int k = 0; k < d; ++k) noise(k) = rng.normal();
      }
      shards[static_cast<std::size_t>(w)].add(reparameterize(posts[i], noise));
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  LatentMoments total(d);
  for (const auto& s : shards) total.merge(s);
  return total.finalize(diagonal, variance_floor);
}

void save_vae(const std::string& path, const VaeCheckpoint& ckpt) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  io::Writer w(file);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.str(ckpt.prefix);
  w.str(config_json(ckpt.config).dump());
  w.u64(ckpt.params.size());
  for (const auto& [name, value] : ckpt.params) {
    w.str(name);
    w.matrix_f64(value);
  }
  w.u8(ckpt.prior ? 1 : 0);
  if (ckpt.prior) {
    w.u8(ckpt.prior->diagonal ? 1 : 0);
    w.u64(static_cast<uint64_t>(ckpt.prior->count));
    w.matrix_f64(Matrix(ckpt.prior->mean));
    w.matrix_f64(ckpt.prior->cov);
  }
  w.str(ckpt.metadata);
  if (!file) throw std::runtime_error("write failed for " + path);
}

VaeCheckpoint load_vae(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  io::Reader r(file);
  io::expect_magic(r, kMagic, "VAE checkpoint");
  io::expect_version(r, kVersion, "VAE checkpoint");
  VaeCheckpoint ckpt;
  ckpt.prefix = r.str();
  try {
    ckpt.config = config_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("VAE checkpoint config: ") + e.what());
  }
  ckpt.config.validate();
  ActionVae::create(ckpt.config, ckpt.params, ckpt.prefix);
  const uint64_t n = r.u64();
  if (n != ckpt.params.size()) {
    throw CorruptionError("VAE checkpoint has " + std::to_string(n) + " tensors, expected " +
                          std::to_string(ckpt.params.size()));
  }
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Matrix value = r.matrix_f64();
    if (!ckpt.params.contains(name)) throw CorruptionError("unknown tensor " + name);
    const Matrix& expected = ckpt.params.at(name);
    if (expected.rows() != value.rows() || expected.cols() != value.cols()) {
      throw CorruptionError("tensor " + name + " has the wrong shape");
    }
    ckpt.params.assign(name, value);
  }
  if (r.u8() != 0) {
    PriorStats p;
    p.diagonal = r.u8() != 0;
    p.count = static_cast<long>(r.u64());
    Matrix mean = r.matrix_f64();
    p.mean = mean.row(0);
    p.cov = r.matrix_f64();
    const auto d = ckpt.config.latent_dim;
    if (mean.rows() != 1 || mean.cols() != d || p.cov.rows() != d || p.cov.cols() != d) {
      throw CorruptionError("VAE checkpoint prior has the wrong shape");
    }
    ckpt.prior = std::move(p);
  }
  ckpt.metadata = r.str();
  return ckpt;
}

}  // namespace ate::vae
