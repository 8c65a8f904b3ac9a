// Copyright 2026 The PSE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pse/error.hpp"

namespace pse {

const char* to_string(VariantKind v) {
  switch (v) {
    case VariantKind::kBaseline: return "baseline";
    case VariantKind::kUnified: return "unified";
    case VariantKind::kDualBoth: return "dual_both";
    case VariantKind::kDualErb: return "dual_erb";
    case VariantKind::kDualDf: return "dual_df";
  }
  return "unknown";
}

VariantKind parse_variant(const std::string& name) {
  for (auto v : {VariantKind::kBaseline, VariantKind::kUnified,
                 VariantKind::kDualBoth, VariantKind::kDualErb,
                 VariantKind::kDualDf}) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + name +
                    "' (expected baseline, unified, dual_both, dual_erb or "
                    "dual_df)");
}

bool is_dual(VariantKind v) {
  return v == VariantKind::kDualBoth || v == VariantKind::kDualErb ||
         v == VariantKind::kDualDf;
}

bool uses_embedding(VariantKind v) { return v != VariantKind::kBaseline; }

bool erb_branch_sees_embedding(VariantKind v) {
  return v == VariantKind::kDualBoth || v == VariantKind::kDualErb;
}

bool df_branch_sees_embedding(VariantKind v) {
  return v == VariantKind::kDualBoth || v == VariantKind::kDualDf;
}

void SpeakerEmbedding::validate() const {
  if (values.size() != static_cast<std::size_t>(kEmbeddingDim)) {
    throw DomainError("speaker embedding has " + std::to_string(values.size()) +
                      " values, expected " + std::to_string(kEmbeddingDim));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError("speaker embedding is not finite");
  }
}

double SpeakerEmbedding::norm() const {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

SpeakerEmbedding SpeakerEmbedding::normalized() const {
  validate();
  const double n = norm();
  if (!(n > 0.0)) throw DomainError("speaker embedding has zero norm");
  SpeakerEmbedding out = *this;
  for (double& v : out.values) v /= n;
  return out;
}

void ModelConfig::validate() const {
  dsp.validate();
  if (conv_channels <= 0 || erb_gru_hidden <= 0 || df_gru_hidden <= 0) {
    throw ConfigError("model widths must be positive");
  }
  if (uses_embedding(variant) && embedding_dim != kEmbeddingDim) {
    throw ConfigError("personalized variants need embedding_dim = " +
                      std::to_string(kEmbeddingDim));
  }
  if (embedding_dim <= 0) throw ConfigError("embedding_dim must be positive");
}

namespace {

constexpr int kConvLayers = 3;

std::vector<LayerSpec> conv_stack(const std::string& prefix, int cin, int c,
                                  int freq) {
  std::vector<LayerSpec> out;
  for (int i = 0; i < kConvLayers; ++i) {
    auto s = LayerSpec::conv2d(prefix + ".conv" + std::to_string(i),
                               i == 0 ? cin : c, c, 2, 3, 2, freq);
    freq = s.out_freq();
    out.push_back(s);
  }
  return out;
}

int flat_size(const std::vector<LayerSpec>& convs) {
  return convs.back().output_size();
}

}  // namespace

Topology describe_model(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.conv_channels;
  const int he = cfg.erb_gru_hidden;
  const int hd = cfg.df_gru_hidden;
  const int emb = cfg.embedding_dim;
  const int bands = cfg.dsp.erb_bands;
  const int dfb = cfg.dsp.df_bins();
  const int order = cfg.dsp.df_order;
  const VariantKind v = cfg.variant;

  Topology t;
  t.cfg = cfg;
  t.erb_convs = conv_stack("erb_enc", 1, c, bands);
  t.df_convs = conv_stack("df_enc", 2, c, dfb);
  const int erb_flat = flat_size(t.erb_convs);
  const int df_flat = flat_size(t.df_convs);

  int erb_lat = 0;
  int df_lat = 0;
  if (!is_dual(v)) {
    t.junction = LayerSpec::grouped_linear("enc.junction", erb_flat + df_flat,
                                           he);
    const int gin = he + (v == VariantKind::kUnified ? emb : 0);
    t.enc_gru = LayerSpec::gru("enc.gru", gin, he);
    erb_lat = he;
    df_lat = he;
  } else {
    t.erb_proj = LayerSpec::grouped_linear("erb_enc.proj", erb_flat, he);
    t.erb_gru = LayerSpec::gru(
        "erb_enc.gru", he + (erb_branch_sees_embedding(v) ? emb : 0), he);
    t.df_proj = LayerSpec::grouped_linear("df_enc.proj", df_flat, hd);
    t.df_gru = LayerSpec::gru(
        "df_enc.gru", hd + (df_branch_sees_embedding(v) ? emb : 0), hd);
    erb_lat = he;
    df_lat = hd;
  }

  const int up = std::max(erb_flat / 2, bands);
  t.erb_fc0 = LayerSpec::grouped_linear("erb_dec.fc0", erb_lat, erb_flat);
  t.erb_fc1 = LayerSpec::grouped_linear("erb_dec.fc1", erb_flat, up);
  t.erb_out = LayerSpec::grouped_linear("erb_dec.out", up, bands);
  t.df_dec_gru = LayerSpec::gru("df_dec.gru", df_lat, hd);
  t.df_fc0 = LayerSpec::grouped_linear("df_dec.fc0", hd, 2 * hd);
  t.df_out = LayerSpec::grouped_linear("df_dec.out", 2 * hd, order * dfb * 2);
  for (const auto& s : t.layers()) s.validate();
  return t;
}

std::vector<LayerSpec> Topology::layers() const {
  const auto relu = [](const LayerSpec& s) {
    return LayerSpec::pointwise(s.name + ".relu", Activation::kRelu,
                                s.output_size());
  };
  const int emb = cfg.embedding_dim;
  const VariantKind v = cfg.variant;
  std::vector<LayerSpec> out;
  for (const auto* stack : {&erb_convs, &df_convs}) {
    for (const auto& s : *stack) {
      out.push_back(s);
      out.push_back(relu(s));
    }
  }
  if (!is_dual(v)) {
    out.push_back(LayerSpec::concat(
        "enc.cat", {erb_convs.back().output_size(),
                    df_convs.back().output_size()}));
    out.push_back(*junction);
    out.push_back(relu(*junction));
    if (v == VariantKind::kUnified) {
      out.push_back(LayerSpec::concat("enc.cat_emb",
                                      {junction->output_size(), emb}));
    }
    out.push_back(*enc_gru);
  } else {
    out.push_back(*erb_proj);
    out.push_back(relu(*erb_proj));
    if (erb_branch_sees_embedding(v)) {
      out.push_back(LayerSpec::concat("erb_enc.cat_emb",
                                      {erb_proj->output_size(), emb}));
    }
    out.push_back(*erb_gru);
    out.push_back(*df_proj);
    out.push_back(relu(*df_proj));
    if (df_branch_sees_embedding(v)) {
      out.push_back(LayerSpec::concat("df_enc.cat_emb",
                                      {df_proj->output_size(), emb}));
    }
    out.push_back(*df_gru);
  }
  out.push_back(erb_fc0);
  out.push_back(relu(erb_fc0));
  out.push_back(erb_fc1);
  out.push_back(relu(erb_fc1));
  out.push_back(erb_out);
  out.push_back(LayerSpec::pointwise("erb_dec.sigmoid", Activation::kSigmoid,
                                     erb_out.output_size()));
  out.push_back(df_dec_gru);
  out.push_back(df_fc0);
  out.push_back(relu(df_fc0));
  out.push_back(df_out);
  return out;
}

int Topology::identity_tap() const {
  const int tap = cfg.dsp.df_order - 1 - cfg.dsp.lookahead_frames;
  return tap >= 0 ? tap : -1;
}

// --- Shared dataflow ------------------------------------------------------

namespace {

// Evaluates the network once with executor `ex`; returns (gains, raw taps).
template <class Ex>
std::pair<typename Ex::Value, typename Ex::Value> run_network(
    const Topology& t, Ex& ex, typename Ex::Value erb, typename Ex::Value df) {
  using V = typename Ex::Value;
  const VariantKind v = t.cfg.variant;
  for (const auto& s : t.erb_convs) erb = ex.act(Activation::kRelu, ex.layer(s, erb));
  for (const auto& s : t.df_convs) df = ex.act(Activation::kRelu, ex.layer(s, df));

  V erb_lat;
  V df_lat;
  if (!is_dual(v)) {
    V j = ex.act(Activation::kRelu, ex.layer(*t.junction, ex.concat(erb, df)));
    if (v == VariantKind::kUnified) j = ex.concat(j, ex.embedding());
    erb_lat = ex.layer(*t.enc_gru, j);
    df_lat = erb_lat;
  } else {
    V e = ex.act(Activation::kRelu, ex.layer(*t.erb_proj, erb));
    if (erb_branch_sees_embedding(v)) e = ex.concat(e, ex.embedding());
    erb_lat = ex.layer(*t.erb_gru, e);
    V d = ex.act(Activation::kRelu, ex.layer(*t.df_proj, df));
    if (df_branch_sees_embedding(v)) d = ex.concat(d, ex.embedding());
    df_lat = ex.layer(*t.df_gru, d);
  }

  V g = ex.act(Activation::kRelu, ex.layer(t.erb_fc0, erb_lat));
  g = ex.act(Activation::kRelu, ex.layer(t.erb_fc1, g));
  g = ex.act(Activation::kSigmoid, ex.layer(t.erb_out, g));

  V d = ex.layer(t.df_dec_gru, df_lat);
  d = ex.act(Activation::kRelu, ex.layer(t.df_fc0, d));
  d = ex.layer(t.df_out, d);
  return {g, d};
}

template <typename T>
using WeightMap = std::map<std::string, std::vector<T>>;

template <typename T>
std::span<const T> weight(const WeightMap<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw FormatError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::span<const T> bias_of(const WeightMap<T>& w, const LayerSpec& s) {
  return s.bias ? weight(w, s.name + ".bias") : std::span<const T>{};
}

// One frame at a time, state carried in ModelState.
template <typename T>
struct StreamExec {
  using Value = std::vector<T>;
  const WeightMap<T>& w;
  ModelState<T>& st;
  const std::vector<T>& emb;
  std::vector<T> scratch;

  Value layer(const LayerSpec& s, const Value& x) {
    Value y(s.output_size());
    switch (s.kind) {
      case LayerKind::kGroupedLinear:
        linear_step<T>(s, weight(w, s.name + ".weight"), bias_of(w, s), x, y);
        break;
      case LayerKind::kConv2d: {
        auto& hist = st.conv_history[s.name];
        if (hist.size() != static_cast<std::size_t>(s.kernel_time - 1)) {
          hist.assign(s.kernel_time - 1, std::vector<T>(s.input_size(), T(0)));
        }
        std::vector<std::span<const T>> frames;
        for (const auto& h : hist) frames.emplace_back(h);
        frames.emplace_back(x);
        conv2d_step<T>(s, weight(w, s.name + ".weight"), bias_of(w, s), frames,
                       y);
        if (!hist.empty()) {
          std::rotate(hist.begin(), hist.begin() + 1, hist.end());
          hist.back() = x;
        }
        break;
      }
      case LayerKind::kGru: {
        auto& h = st.gru_hidden[s.name];
        if (h.size() != static_cast<std::size_t>(s.hidden)) {
          h.assign(s.hidden, T(0));
        }
        scratch.resize(6 * s.hidden);
        gru_step<T>(s, weight(w, s.name + ".w_ih"), weight(w, s.name + ".w_hh"),
                    weight(w, s.name + ".b_ih"), weight(w, s.name + ".b_hh"),
                    x, h, y, scratch);
        h = y;
        break;
      }
      default:
        throw CapabilityError("unsupported layer in stream executor");
    }
    return y;
  }
  Value act(Activation a, Value x) {
    activate<T>(a, x);
    return x;
  }
  Value concat(const Value& a, const Value& b) {
    Value y(a);
    y.insert(y.end(), b.begin(), b.end());
    return y;
  }
  Value embedding() { return emb; }
};

// Whole sequence, frames x width, row-major.
template <typename T>
struct Seq {
  std::vector<T> data;
  std::size_t width = 0;
};

template <typename T>
struct SeqExec {
  using Value = Seq<T>;
  const WeightMap<T>& w;
  std::size_t frames;
  const std::vector<T>& emb;

  Value layer(const LayerSpec& s, const Value& x) {
    const std::size_t in = s.input_size();
    const std::size_t out = s.output_size();
    if (x.width != in) throw DomainError("sequence width mismatch at " + s.name);
    Value y{std::vector<T>(frames * out), out};
    switch (s.kind) {
      case LayerKind::kGroupedLinear: {
        auto wt = weight(w, s.name + ".weight");
        auto b = bias_of(w, s);
        for (std::size_t t = 0; t < frames; ++t) {
          linear_step<T>(s, wt, b, std::span<const T>(x.data).subspan(t * in, in),
                         std::span<T>(y.data).subspan(t * out, out));
        }
        break;
      }
      case LayerKind::kConv2d: {
        auto wt = weight(w, s.name + ".weight");
        auto b = bias_of(w, s);
        const std::vector<T> zeros(in, T(0));
        std::vector<std::span<const T>> win(s.kernel_time);
        for (std::size_t t = 0; t < frames; ++t) {
          for (int dt = 0; dt < s.kernel_time; ++dt) {
            const long src = static_cast<long>(t) - (s.kernel_time - 1) + dt;
            win[dt] = src >= 0 ? std::span<const T>(x.data).subspan(src * in, in)
                               : std::span<const T>(zeros);
          }
          conv2d_step<T>(s, wt, b, win,
                         std::span<T>(y.data).subspan(t * out, out));
        }
        break;
      }
      case LayerKind::kGru: {
        auto wih = weight(w, s.name + ".w_ih");
        auto whh = weight(w, s.name + ".w_hh");
        auto bih = weight(w, s.name + ".b_ih");
        auto bhh = weight(w, s.name + ".b_hh");
        std::vector<T> h(s.hidden, T(0));
        std::vector<T> scratch(6 * s.hidden);
        for (std::size_t t = 0; t < frames; ++t) {
          auto yt = std::span<T>(y.data).subspan(t * out, out);
          gru_step<T>(s, wih, whh, bih, bhh,
                      std::span<const T>(x.data).subspan(t * in, in), h, yt,
                      scratch);
          std::copy(yt.begin(), yt.end(), h.begin());
        }
        break;
      }
      default:
        throw CapabilityError("unsupported layer in sequence executor");
    }
    return y;
  }
  Value act(Activation a, Value x) {
    activate<T>(a, std::span<T>(x.data));
    return x;
  }
  Value concat(const Value& a, const Value& b) {
    Value y{std::vector<T>(frames * (a.width + b.width)), a.width + b.width};
    for (std::size_t t = 0; t < frames; ++t) {
      auto dst = y.data.begin() + t * y.width;
      dst = std::copy_n(a.data.begin() + t * a.width, a.width, dst);
      std::copy_n(b.data.begin() + t * b.width, b.width, dst);
    }
    return y;
  }
  Value embedding() {
    Value y{std::vector<T>(frames * emb.size()), emb.size()};
    for (std::size_t t = 0; t < frames; ++t) {
      std::copy(emb.begin(), emb.end(), y.data.begin() + t * emb.size());
    }
    return y;
  }
};

struct TapeExec {
  using Value = Tape::Id;
  Tape& tape;
  const std::map<std::string, Tape::Id>& params;
  std::size_t frames;
  const SpeakerEmbedding* emb;

  Value layer(const LayerSpec& s, Value x) {
    return ag::layer(tape, s, params, x);
  }
  Value act(Activation a, Value x) { return ag::pointwise(tape, a, x); }
  Value concat(Value a, Value b) {
    const Tape::Id parts[] = {a, b};
    return ag::concat(tape, parts);
  }
  Value embedding() {
    if (emb == nullptr) throw UsageError("variant needs a speaker embedding");
    Tensor e({frames, emb->values.size()});
    for (std::size_t t = 0; t < frames; ++t) {
      std::copy(emb->values.begin(), emb->values.end(),
                e.vec().begin() + t * emb->values.size());
    }
    return tape.constant(std::move(e));
  }
};

void check_params(const Topology& topo, const ParamStore& params) {
  std::size_t expected = 0;
  for (const auto& s : topo.layers()) {
    for (const auto& [name, shape] : s.param_shapes()) {
      ++expected;
      if (!params.contains(name)) {
        throw FormatError("model is missing tensor '" + name + "'");
      }
      const auto& have = params.at(name).shape();
      if (have != shape) {
        throw FormatError("tensor '" + name + "' has shape " +
                          shape_string(have) + ", expected " +
                          shape_string(shape));
      }
    }
  }
  if (params.size() != expected) {
    for (const auto& [name, _] : params.tensors()) {
      bool known = false;
      for (const auto& s : topo.layers()) {
        for (const auto& [pn, shape] : s.param_shapes()) known |= pn == name;
      }
      if (!known) throw FormatError("unexpected tensor '" + name + "' in model");
    }
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// --- Model ----------------------------------------------------------------

Model::Model(Topology topo, ParamStore params)
    : topo_(std::move(topo)),
      params_(std::move(params)),
      fb_(build_erb_filterbank(topo_.cfg.dsp)) {}

Model Model::build(const ModelConfig& cfg) {
  Topology topo = describe_model(cfg);
  ParamStore params;
  const auto layers = topo.layers();
  init_params(layers, cfg.seed, params);
  return Model(std::move(topo), std::move(params));
}

Model Model::from_params(const ModelConfig& cfg, ParamStore params) {
  Topology topo = describe_model(cfg);
  check_params(topo, params);
  for (auto& [name, t] : params.tensors()) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) {
        throw FormatError("tensor '" + name + "' holds non-finite values");
      }
    }
  }
  // Metadata is regenerated from the config.
  ParamStore clean;
  for (auto& [name, t] : params.tensors()) clean.set(name, std::move(t));
  return Model(std::move(topo), std::move(clean));
}

std::int64_t Model::param_count() const {
  const auto l = layers();
  return count_params(l);
}

std::int64_t Model::macs_per_second() const {
  const auto l = layers();
  return count_macs(l, config().dsp);
}

ParamStore Model::to_store() const {
  ParamStore s = params_;
  write_metadata(config(), s);
  return s;
}

void write_metadata(const ModelConfig& cfg, ParamStore& s) {
  const DspConfig& d = cfg.dsp;
  s.set_meta("variant", to_string(cfg.variant));
  s.set_meta("sample_rate", std::to_string(d.sample_rate));
  s.set_meta("erb_bands", std::to_string(d.erb_bands));
  s.set_meta("f_df", fmt_double(d.f_df));
  s.set_meta("df_order", std::to_string(d.df_order));
  s.set_meta("schema_version", std::to_string(kModelSchemaVersion));
  s.set_meta("win_ms", fmt_double(d.win_ms));
  s.set_meta("overlap", fmt_double(d.overlap));
  s.set_meta("fft_size", std::to_string(d.fft_size));
  s.set_meta("lookahead_frames", std::to_string(d.lookahead_frames));
  s.set_meta("norm_tau_s", fmt_double(d.norm_tau_s));
  s.set_meta("conv_channels", std::to_string(cfg.conv_channels));
  s.set_meta("erb_gru_hidden", std::to_string(cfg.erb_gru_hidden));
  s.set_meta("df_gru_hidden", std::to_string(cfg.df_gru_hidden));
  s.set_meta("embedding_dim", std::to_string(cfg.embedding_dim));
  s.set_meta("seed", std::to_string(cfg.seed));
}

ModelConfig config_from_metadata(const ParamStore& s) {
  for (const char* key : {"variant", "sample_rate", "erb_bands", "f_df",
                          "df_order", "schema_version"}) {
    if (!s.has_meta(key)) {
      throw FormatError(std::string("model metadata lacks '") + key + "'");
    }
  }
  const auto num = [&](const char* key, double fallback) {
    if (!s.has_meta(key)) return fallback;
    const std::string& v = s.meta(key);
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) {
      throw FormatError(std::string("model metadata '") + key +
                        "' is not a number: '" + v + "'");
    }
    return out;
  };
  const auto integer = [&](const char* key, double fallback) {
    const double v = num(key, fallback);
    if (v != std::floor(v)) {
      throw FormatError(std::string("model metadata '") + key +
                        "' is not an integer");
    }
    return v;
  };
  const int schema = static_cast<int>(integer("schema_version", 0));
  if (schema != kModelSchemaVersion) {
    throw FormatError("model schema_version " + s.meta("schema_version") +
                      " is not supported (expected " +
                      std::to_string(kModelSchemaVersion) + ")");
  }
  ModelConfig cfg;
  try {
    cfg.variant = parse_variant(s.meta("variant"));
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  DspConfig& d = cfg.dsp;
  d.sample_rate = static_cast<int>(integer("sample_rate", d.sample_rate));
  d.erb_bands = static_cast<int>(integer("erb_bands", d.erb_bands));
  d.f_df = num("f_df", d.f_df);
  d.df_order = static_cast<int>(integer("df_order", d.df_order));
  d.win_ms = num("win_ms", d.win_ms);
  d.overlap = num("overlap", d.overlap);
  d.fft_size = static_cast<int>(integer("fft_size", d.fft_size));
  d.lookahead_frames =
      static_cast<int>(integer("lookahead_frames", d.lookahead_frames));
  d.norm_tau_s = num("norm_tau_s", d.norm_tau_s);
  cfg.conv_channels =
      static_cast<int>(integer("conv_channels", cfg.conv_channels));
  cfg.erb_gru_hidden =
      static_cast<int>(integer("erb_gru_hidden", cfg.erb_gru_hidden));
  cfg.df_gru_hidden =
      static_cast<int>(integer("df_gru_hidden", cfg.df_gru_hidden));
  cfg.embedding_dim =
      static_cast<int>(integer("embedding_dim", cfg.embedding_dim));
  cfg.seed = static_cast<std::uint64_t>(integer("seed", 0));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model metadata is inconsistent: ") +
                      e.what());
  }
  return cfg;
}

Model model_from_store(const ParamStore& store) {
  return Model::from_params(config_from_metadata(store), store);
}

void save_model(const Model& model, const std::filesystem::path& path) {
  save_container(model.to_store(), path);
}

Model load_model(const std::filesystem::path& path) {
  const ParamStore store = load_container(path);
  try {
    return model_from_store(store);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
}

Model make_identity_model(const ModelConfig& cfg) {
  Model base = Model::build(cfg);
  ParamStore p = base.params();
  const Topology& t = base.topology();
  if (t.identity_tap() < 0) {
    throw ConfigError("no deep-filter tap addresses the current frame");
  }
  for (double& v : p.at(t.erb_out.name + ".weight").vec()) v = 0.0;
  for (double& v : p.at(t.erb_out.name + ".bias").vec()) v = 1000.0;
  for (double& v : p.at(t.df_out.name + ".weight").vec()) v = 0.0;
  for (double& v : p.at(t.df_out.name + ".bias").vec()) v = 0.0;
  return Model::from_params(cfg, std::move(p));
}

// --- Streaming state ------------------------------------------------------

template <typename T>
void ModelState<T>::reset() {
  erb_norm.reset();
  df_norm.reset();
  for (auto& [_, frames] : conv_history) {
    for (auto& f : frames) std::fill(f.begin(), f.end(), T(0));
  }
  for (auto& [_, h] : gru_hidden) std::fill(h.begin(), h.end(), T(0));
  for (auto& f : df_history) std::fill(f.begin(), f.end(), std::complex<T>{});
  tap_history.clear();
  frames_seen = 0;
}

template struct ModelState<float>;
template struct ModelState<double>;

// --- Enhancer -------------------------------------------------------------

namespace {

template <typename T>
std::vector<T> to_t(const SpeakerEmbedding* emb) {
  if (emb == nullptr) return {};
  return std::vector<T>(emb->values.begin(), emb->values.end());
}

// Raw decoder output plus the identity tap, viewed as [order][df_bins].
template <typename T>
void add_identity(const Topology& topo, std::span<T> raw) {
  const int tap = topo.identity_tap();
  if (tap < 0) return;
  const int dfb = topo.df_bins();
  for (int f = 0; f < dfb; ++f) raw[2 * (tap * dfb + f)] += T(1);
}

template <typename T>
std::span<const std::complex<T>> as_complex(std::span<const T> v) {
  return {reinterpret_cast<const std::complex<T>*>(v.data()), v.size() / 2};
}

}  // namespace

template <typename T>
Enhancer<T>::Enhancer(const Model& model)
    : model_(std::make_shared<const Model>(model)) {
  for (const auto& [name, t] : model_->params().tensors()) {
    weights_[name] = std::vector<T>(t.vec().begin(), t.vec().end());
  }
}

template <typename T>
int Enhancer<T>::history_depth() const {
  const auto& d = model_->config().dsp;
  return std::max({d.df_order, d.df_order - 1 + d.lookahead_frames,
                   d.lookahead_frames + 1});
}

template <typename T>
ModelState<T> Enhancer<T>::new_state() const {
  const auto& cfg = model_->config();
  const double alpha = cfg.dsp.norm_alpha();
  ModelState<T> st;
  st.erb_norm = NormState<T>(cfg.dsp.erb_bands, alpha);
  st.df_norm = NormState<T>(cfg.dsp.df_bins(), alpha);
  st.df_history.assign(history_depth(),
                       std::vector<std::complex<T>>(cfg.dsp.bins()));
  return st;
}

template <typename T>
void Enhancer<T>::check_embedding(const SpeakerEmbedding* emb) const {
  const VariantKind v = model_->config().variant;
  if (uses_embedding(v) && emb == nullptr) {
    throw UsageError(std::string("variant ") + to_string(v) +
                     " needs a speaker embedding");
  }
  if (!uses_embedding(v) && emb != nullptr) {
    throw UsageError("the baseline variant takes no speaker embedding");
  }
  if (emb != nullptr) emb->validate();
}

template <typename T>
void Enhancer<T>::enhance_frame(ModelState<T>& st,
                                std::span<const std::complex<T>> frame,
                                const SpeakerEmbedding* emb,
                                std::span<std::complex<T>> out) const {
  check_embedding(emb);
  const Topology& topo = model_->topology();
  const DspConfig& d = topo.cfg.dsp;
  const int bins = d.bins();
  const int dfb = d.df_bins();
  const int order = d.df_order;
  const int look = d.lookahead_frames;
  if (static_cast<int>(frame.size()) != bins ||
      static_cast<int>(out.size()) != bins) {
    throw DomainError("enhance_frame expects " + std::to_string(bins) +
                      " bins");
  }
  if (static_cast<int>(st.df_history.size()) != history_depth()) {
    throw UsageError("model state does not belong to this model");
  }

  std::vector<T> erb_in(d.erb_bands);
  erb_feature_frame<T>(frame, model_->filterbank(), st.erb_norm, erb_in);
  std::vector<T> df_in(2 * dfb);
  complex_feature_frame<T>(
      frame, dfb, st.df_norm,
      std::span<std::complex<T>>(
          reinterpret_cast<std::complex<T>*>(df_in.data()), dfb));

  const std::vector<T> e = to_t<T>(emb);
  StreamExec<T> ex{weights_, st, e, {}};
  auto [gains, taps] = run_network(topo, ex, std::move(erb_in),
                                   std::move(df_in));
  add_identity<T>(topo, std::span<T>(taps));

  std::rotate(st.df_history.begin(), st.df_history.begin() + 1,
              st.df_history.end());
  apply_erb_gains_frame<T>(frame, gains, model_->filterbank(),
                           st.df_history.back());
  std::vector<std::complex<T>> tv(as_complex<T>(taps).begin(),
                                  as_complex<T>(taps).end());
  st.tap_history.push_back(std::move(tv));
  if (static_cast<int>(st.tap_history.size()) > look + 1) {
    st.tap_history.erase(st.tap_history.begin());
  }

  const std::int64_t t = st.frames_seen++;
  if (t < look) {
    std::fill(out.begin(), out.end(), std::complex<T>{});
    return;
  }
  const int depth = history_depth();
  std::vector<std::span<const std::complex<T>>> inputs(order);
  for (int i = 0; i < order; ++i) {
    const std::int64_t src = t - (order - 1) + i;
    inputs[i] = src >= 0 ? std::span<const std::complex<T>>(
                               st.df_history[depth - 1 - (t - src)])
                         : std::span<const std::complex<T>>{};
  }
  deep_filter_frame<T>(inputs, st.tap_history.front(),
                       st.df_history[depth - 1 - look], out);
}

template <typename T>
OfflineOutputs<T> Enhancer<T>::forward_offline(
    const BasicSpectrogram<T>& spec, const SpeakerEmbedding* emb) const {
  check_embedding(emb);
  const Topology& topo = model_->topology();
  const DspConfig& d = topo.cfg.dsp;
  if (static_cast<int>(spec.cols()) != d.bins()) {
    throw DomainError("spectrogram bins do not match the model");
  }
  const std::size_t frames = spec.rows();
  const int dfb = d.df_bins();
  const double alpha = d.norm_alpha();

  NormState<T> erb_norm(d.erb_bands, alpha);
  NormState<T> df_norm(dfb, alpha);
  ErbFeature<T> erb = erb_features<T>(spec, model_->filterbank(), erb_norm);
  ComplexFeature<T> cf = complex_features<T>(spec, d, df_norm);

  Seq<T> erb_in{std::move(erb.values.data()),
                static_cast<std::size_t>(d.erb_bands)};
  Seq<T> df_in{std::vector<T>(frames * 2 * dfb),
               static_cast<std::size_t>(2 * dfb)};
  for (std::size_t i = 0; i < cf.values.data().size(); ++i) {
    df_in.data[2 * i] = cf.values.data()[i].real();
    df_in.data[2 * i + 1] = cf.values.data()[i].imag();
  }

  const std::vector<T> e = to_t<T>(emb);
  SeqExec<T> ex{weights_, frames, e};
  auto [g, taps] = run_network(topo, ex, std::move(erb_in), std::move(df_in));

  OfflineOutputs<T> out;
  out.gains = Matrix<T>(frames, d.erb_bands);
  out.gains.data() = std::move(g.data);
  out.taps = DfCoeffs<T>(frames, d.df_order, dfb);
  for (std::size_t t = 0; t < frames; ++t) {
    auto row = std::span<T>(taps.data).subspan(t * taps.width, taps.width);
    add_identity<T>(topo, row);
    auto c = as_complex<T>(std::span<const T>(row));
    std::copy(c.begin(), c.end(), out.taps.frame(t).begin());
  }
  out.stage1 = apply_erb_gains<T>(spec, out.gains, model_->filterbank());
  out.enhanced = deep_filter<T>(out.stage1, out.taps, d);
  return out;
}

template <typename T>
AudioBuffer Enhancer<T>::enhance_offline(const AudioBuffer& audio,
                                         const SpeakerEmbedding* emb) const {
  check_embedding(emb);
  validate(audio);
  const DspConfig& d = model_->config().dsp;
  AudioBuffer padded = audio;
  padded.samples.resize(audio.samples.size() + d.win_length() - d.hop(), 0.0);
  const auto spec = stft<T>(padded, d);
  const auto fwd = forward_offline(spec, emb);
  AudioBuffer out = istft<T>(fwd.enhanced, d);
  out.samples.resize(audio.samples.size());
  return out;
}

template <typename T>
AudioBuffer Enhancer<T>::enhance_streaming(const AudioBuffer& audio,
                                           const SpeakerEmbedding* emb) const {
  check_embedding(emb);
  validate(audio);
  const DspConfig& d = model_->config().dsp;
  if (audio.sample_rate != d.sample_rate) {
    throw ConfigError("audio sample rate does not match the model");
  }
  if (audio.samples.empty()) throw DomainError("cannot enhance empty audio");
  const std::size_t hop = d.hop();
  const std::size_t delay = d.win_length() - d.hop();
  const std::size_t frames = (audio.samples.size() + delay + hop - 1) / hop;
  const int look = d.lookahead_frames;

  StreamingStft<T> ana(d);
  StreamingIstft<T> syn(d);
  ModelState<T> st = new_state();
  std::vector<T> in_hop(hop);
  std::vector<T> out_hop(hop);
  std::vector<std::complex<T>> frame(d.bins());
  std::vector<std::complex<T>> enhanced(d.bins());
  std::vector<T> stream;
  stream.reserve((frames + 1) * hop);

  for (std::size_t t = 0; t < frames + look; ++t) {
    if (t < frames) {
      for (std::size_t p = 0; p < hop; ++p) {
        const std::size_t n = t * hop + p;
        in_hop[p] = n < audio.samples.size()
                        ? static_cast<T>(audio.samples[n])
                        : T(0);
      }
      ana.push(in_hop, frame);
    } else {
      std::fill(frame.begin(), frame.end(), std::complex<T>{});
    }
    enhance_frame(st, frame, emb, enhanced);
    if (static_cast<int>(t) < look) continue;
    syn.push(enhanced, out_hop);
    stream.insert(stream.end(), out_hop.begin(), out_hop.end());
  }
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(audio.samples.size(), 0.0);
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    out.samples[n] = static_cast<double>(stream[n + delay]);
  }
  return out;
}

template class Enhancer<float>;
template class Enhancer<double>;

AudioBuffer enhance_offline(const Model& model, const AudioBuffer& audio,
                            const SpeakerEmbedding* emb) {
  return Enhancer<float>(model).enhance_offline(audio, emb);
}

TapeOutputs forward_tape(Tape& tape, const Topology& topo,
                         const std::map<std::string, Tape::Id>& params,
                         const Tensor& erb, const Tensor& df,
                         const SpeakerEmbedding* emb) {
  const DspConfig& d = topo.cfg.dsp;
  if (erb.rank() != 2 || df.rank() != 2 || erb.dim(0) != df.dim(0) ||
      static_cast<int>(erb.dim(1)) != d.erb_bands ||
      static_cast<int>(df.dim(1)) != 2 * d.df_bins()) {
    throw DomainError("feature tensors do not match the model");
  }
  if (uses_embedding(topo.cfg.variant)) {
    if (emb == nullptr) throw UsageError("variant needs a speaker embedding");
    emb->validate();
  }
  const std::size_t frames = erb.dim(0);
  TapeExec ex{tape, params, frames, emb};
  auto [g, raw] = run_network(topo, ex, tape.constant(erb), tape.constant(df));

  Tensor taps = tape.value(raw);
  for (std::size_t t = 0; t < frames; ++t) {
    add_identity<double>(
        topo, taps.data().subspan(t * taps.dim(1), taps.dim(1)));
  }
  const Tape::Id out = tape.record(
      "add_identity_tap", std::move(taps), {raw},
      [](Tape& tp, Tape::Id self) {
        const Tape::Id in = tp.inputs(self)[0];
        if (!tp.requires_grad(in)) return;
        auto gs = tp.grad(self).data();
        auto gi = tp.grad(in).data();
        for (std::size_t i = 0; i < gs.size(); ++i) gi[i] += gs[i];
      });
  return {g, out};
}

}  // namespace pse
