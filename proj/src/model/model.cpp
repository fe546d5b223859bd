#include "hpm/model/model.hpp"

#include <algorithm>

#include "hpm/diffmath/ops.hpp"
#include "hpm/error.hpp"
#include "hpm/rng.hpp"

namespace hpm::model {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kInitStd = 0.02;

void require_heads(const char* what, std::size_t width, std::size_t heads) {
  if (width == 0 || heads == 0 || width % heads != 0)
    throw ConfigError(std::string(what) + ": width " + std::to_string(width) +
                      " not divisible by " + std::to_string(heads) + " heads");
}

Tensor trunc_normal(Rng& rng, diff::Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.truncated_normal(kInitStd);
  return t;
}

Linear make_linear(Rng& rng, std::size_t in, std::size_t out) {
  return {Parameter(trunc_normal(rng, {in, out})), Parameter(Tensor({out}))};
}

Norm make_norm(std::size_t d) { return {Parameter(Tensor({d}, 1.0)), Parameter(Tensor({d}))}; }

Block make_block(Rng& rng, std::size_t d, std::size_t mlp_ratio) {
  Block b;
  b.norm1 = make_norm(d);
  b.query = make_linear(rng, d, d);
  b.key = make_linear(rng, d, d);
  b.value = make_linear(rng, d, d);
  b.proj = make_linear(rng, d, d);
  b.norm2 = make_norm(d);
  b.fc1 = make_linear(rng, d, d * mlp_ratio);
  b.fc2 = make_linear(rng, d * mlp_ratio, d);
  return b;
}

Decoder make_decoder(Rng& rng, const DecoderConfig& c, std::size_t input_width) {
  Decoder dec;
  dec.config = c;
  dec.input_width = input_width;
  dec.embed = make_linear(rng, input_width, c.width);
  dec.mask_token = Parameter(trunc_normal(rng, {1, c.width}));
  for (std::size_t i = 0; i < c.depth; ++i) dec.blocks.push_back(make_block(rng, c.width, c.mlp_ratio));
  dec.norm = make_norm(c.width);
  dec.head = make_linear(rng, c.width, c.output_dim);
  return dec;
}

template <class P, class Fn>
void visit_linear(const std::string& prefix, P& l, Fn& fn) {
  fn(prefix + ".weight", l.weight);
  fn(prefix + ".bias", l.bias);
}

template <class P, class Fn>
void visit_norm(const std::string& prefix, P& n, Fn& fn) {
  fn(prefix + ".gain", n.gain);
  fn(prefix + ".bias", n.bias);
}

template <class B, class Fn>
void visit_block(const std::string& prefix, B& b, Fn& fn) {
  visit_norm(prefix + ".norm1", b.norm1, fn);
  visit_linear(prefix + ".query", b.query, fn);
  visit_linear(prefix + ".key", b.key, fn);
  visit_linear(prefix + ".value", b.value, fn);
  visit_linear(prefix + ".proj", b.proj, fn);
  visit_norm(prefix + ".norm2", b.norm2, fn);
  visit_linear(prefix + ".fc1", b.fc1, fn);
  visit_linear(prefix + ".fc2", b.fc2, fn);
}

template <class D, class Fn>
void visit_decoder(const std::string& prefix, D& d, Fn& fn) {
  visit_linear(prefix + ".embed", d.embed, fn);
  fn(prefix + ".mask_token", d.mask_token);
  for (std::size_t i = 0; i < d.blocks.size(); ++i)
    visit_block(prefix + ".blocks." + std::to_string(i), d.blocks[i], fn);
  visit_norm(prefix + ".norm", d.norm, fn);
  visit_linear(prefix + ".head", d.head, fn);
}

template <class M, class Fn>
void visit_model(M& m, Fn& fn) {
  visit_linear("encoder.embed", m.encoder.embed, fn);
  for (std::size_t i = 0; i < m.encoder.blocks.size(); ++i)
    visit_block("encoder.blocks." + std::to_string(i), m.encoder.blocks[i], fn);
  visit_norm("encoder.norm", m.encoder.norm, fn);
  visit_decoder("reconstructor", m.reconstructor, fn);
  visit_decoder("predictor", m.predictor, fn);
}

Var linear(Tape& tape, Var x, Linear& l) {
  return diff::add_row(diff::matmul(x, tape.param(l.weight)), tape.param(l.bias));
}

Var norm(Tape& tape, Var x, Norm& n) {
  return diff::layer_norm(x, tape.param(n.gain), tape.param(n.bias), kNormEps);
}

Var block_forward(Tape& tape, Block& b, Var x, std::size_t heads, std::size_t seg_len) {
  Var h = norm(tape, x, b.norm1);
  Var a = diff::attention(linear(tape, h, b.query), linear(tape, h, b.key),
                          linear(tape, h, b.value), heads, seg_len);
  x = diff::add(x, linear(tape, a, b.proj));
  Var m = diff::gelu(linear(tape, norm(tape, x, b.norm2), b.fc1));
  return diff::add(x, linear(tape, m, b.fc2));
}

void check_keep(std::span<const std::vector<std::size_t>> keep, std::size_t n) {
  if (keep.empty()) throw ContractError("empty batch");
  const std::size_t len = keep[0].size();
  for (const auto& ids : keep) {
    if (ids.empty()) throw ContractError("at least one visible patch is required");
    if (ids.size() != len) throw ContractError("visible counts differ across the batch");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= n)
        throw ContractError("keep id " + std::to_string(ids[i]) + " outside [0," +
                            std::to_string(n) + ")");
      if (i > 0 && ids[i] <= ids[i - 1]) throw ContractError("keep ids must be strictly ascending");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  require_heads("encoder", encoder.width, encoder.heads);
  require_heads("reconstructor", reconstructor.width, reconstructor.heads);
  require_heads("predictor", predictor.width, predictor.heads);
  if (encoder.token_dim == 0 || reconstructor.output_dim == 0)
    throw ConfigError("token and output dimensions must be positive");
  if (!(encoder.input_std > 0.0)) throw ConfigError("encoder input_std must be positive");
  if (predictor.output_dim != 1) throw ConfigError("loss predictor output_dim must be 1");
  if (encoder.mlp_ratio == 0 || reconstructor.mlp_ratio == 0 || predictor.mlp_ratio == 0)
    throw ConfigError("mlp_ratio must be positive");
}

void ModelParams::for_each(const std::function<void(const std::string&, Parameter&)>& fn) {
  visit_model(*this, fn);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Parameter&)>& fn) const {
  visit_model(*this, fn);
}

std::vector<Parameter*> ModelParams::parameters() {
  std::vector<Parameter*> out;
  for_each([&](const std::string&, Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for_each([&](const std::string& n, const Parameter&) { out.push_back(n); });
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Parameter& p) { n += p.value.size(); });
  return n;
}

void ModelParams::zero_grad() {
  for_each([](const std::string&, Parameter& p) { p.zero_grad(); });
}

Role role_of(const std::string& name) {
  if (name.starts_with("encoder.")) return Role::encoder;
  if (name.starts_with("reconstructor.")) return Role::reconstructor;
  if (name.starts_with("predictor.")) return Role::predictor;
  throw ContractError("parameter '" + name + "' has no role prefix");
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = config;
  const EncoderConfig& e = config.encoder;
  m.encoder.config = e;
  m.encoder.embed = make_linear(rng, e.token_dim, e.width);
  for (std::size_t i = 0; i < e.depth; ++i)
    m.encoder.blocks.push_back(make_block(rng, e.width, e.mlp_ratio));
  m.encoder.norm = make_norm(e.width);
  m.reconstructor = make_decoder(rng, config.reconstructor, e.width);
  m.predictor = make_decoder(rng, config.predictor, e.width);
  return m;
}

std::vector<bool> decay_mask(const ModelParams& params) {
  std::vector<bool> out;
  params.for_each([&](const std::string& name, const Parameter& p) {
    out.push_back(p.value.rank() == 2 && !name.ends_with("mask_token"));
  });
  return out;
}

Var encode_rows(Tape& tape, Encoder& enc, const Tensor& tokens, const Tensor& pos,
                std::size_t seg_len) {
  if (tokens.rank() != 2 || tokens.cols() != enc.config.token_dim)
    throw DimensionError("encode: tokens " + diff::shape_str(tokens.shape()) +
                         " do not match token_dim " + std::to_string(enc.config.token_dim));
  if (pos.rank() != 2 || pos.rows() != tokens.rows() || pos.cols() != enc.config.width)
    throw DimensionError("encode: positional rows " + diff::shape_str(pos.shape()) +
                         " do not match " + std::to_string(tokens.rows()) + "x" +
                         std::to_string(enc.config.width));
  Tensor scaled = tokens;
  const double inv = 1.0 / enc.config.input_std;
  for (double& v : scaled.storage()) v = (v - enc.config.input_mean) * inv;
  Var x = linear(tape, tape.constant(std::move(scaled)), enc.embed);
  x = diff::add(x, tape.constant(pos));
  for (Block& b : enc.blocks) x = block_forward(tape, b, x, enc.config.heads, seg_len);
  return norm(tape, x, enc.norm);
}

Var encode(Tape& tape, Encoder& enc, std::span<const Tensor* const> tokens,
           std::span<const std::vector<std::size_t>> keep, const Tensor& pos) {
  if (tokens.size() != keep.size()) throw ContractError("encode: batch and keep sizes differ");
  const std::size_t n = pos.rows();
  check_keep(keep, n);
  const std::size_t V = keep[0].size(), D = enc.config.token_dim, W = pos.cols();
  Tensor rows({tokens.size() * V, D});
  Tensor pos_rows({tokens.size() * V, W});
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (tokens[b]->rows() != n || tokens[b]->cols() != D)
      throw DimensionError("encode: sample tokens " + diff::shape_str(tokens[b]->shape()) +
                           " do not match " + std::to_string(n) + "x" + std::to_string(D));
    for (std::size_t j = 0; j < V; ++j) {
      const std::size_t src = keep[b][j], dst = b * V + j;
      std::copy_n(tokens[b]->data() + src * D, D, rows.data() + dst * D);
      std::copy_n(pos.data() + src * W, W, pos_rows.data() + dst * W);
    }
  }
  return encode_rows(tape, enc, rows, pos_rows, V);
}

Var decode(Tape& tape, Decoder& dec, Var latents, std::span<const std::vector<std::size_t>> keep,
           std::size_t num_patches, const Tensor& pos) {
  check_keep(keep, num_patches);
  const std::size_t B = keep.size(), V = keep[0].size(), W = dec.config.width;
  if (latents.value().rank() != 2 || latents.value().rows() != B * V ||
      latents.value().cols() != dec.input_width)
    throw ContractError("decode: latents " + diff::shape_str(latents.shape()) +
                        " inconsistent with " + std::to_string(B) + " samples of " +
                        std::to_string(V) + " visible patches");
  if (pos.rank() != 2 || pos.rows() != num_patches || pos.cols() != W)
    throw DimensionError("decode: positional table " + diff::shape_str(pos.shape()) +
                         " does not match " + std::to_string(num_patches) + "x" +
                         std::to_string(W));
  Var y = linear(tape, latents, dec.embed);
  Var pool = diff::concat_rows(y, tape.param(dec.mask_token));
  const std::size_t mask_row = B * V;
  std::vector<std::size_t> ids(B * num_patches, mask_row);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < V; ++j) ids[b * num_patches + keep[b][j]] = b * V + j;
  Var x = diff::gather_rows(pool, ids);
  Tensor pos_tiled({B * num_patches, W});
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(pos.data(), num_patches * W, pos_tiled.data() + b * num_patches * W);
  x = diff::add(x, tape.constant(std::move(pos_tiled)));
  for (Block& blk : dec.blocks) x = block_forward(tape, blk, x, dec.config.heads, num_patches);
  return linear(tape, norm(tape, x, dec.norm), dec.head);
}

}  // namespace hpm::model
