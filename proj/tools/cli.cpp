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

#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pse/audio.hpp"
#include "pse/error.hpp"
#include "pse/log.hpp"
#include "pse/metrics.hpp"
#include "pse/mixer.hpp"
#include "pse/model.hpp"
#include "pse/parallel.hpp"
#include "pse/toy.hpp"
#include "pse/trainer.hpp"

namespace pse::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 0;
  int verbose = 0;
  bool quiet = false;
};

struct EnhanceArgs {
  std::string in, out, model, embedding, variant;
};

struct MixArgs {
  std::string target_dir, interf_dir, noise_dir, out;
  double hours = 0.1;
  double clip_secs = 5.0;
  std::string dist = "gaussian";
  std::vector<double> weights = {0.2, 0.3, 0.5};
};

struct TrainArgs {
  std::string manifest, val_manifest, embeddings_dir, out;
  std::string variant = "unified";
  int epochs = 30;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int patience = 15;
  double crop_secs = 0.0;
  int conv_channels = 64;
  int erb_gru_hidden = 256;
  int df_gru_hidden = 256;
  int erb_bands = 32;
  double f_df = 5000.0;
};

struct EvalArgs {
  std::string manifest, model, embeddings_dir, report;
};

struct BenchArgs {
  std::string model;
  std::string variant = "unified";
  double secs = 30.0;
  int reps = 5;
};

struct EmbedArgs {
  std::string in, out;
};

struct ToyArgs {
  std::string out;
  int speakers = 2;
  int files_per_speaker = 4;
  double file_secs = 30.0;
  int noise_files = 4;
  double enroll_secs = 8.0;
  int sample_rate = 16000;
};

fs::path manifest_path(const std::string& arg) {
  const fs::path p(arg);
  return fs::is_directory(p) ? p / kManifestName : p;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void cmd_enhance(const Globals&, const EnhanceArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const VariantKind v = model.config().variant;
  if (!a.variant.empty() && parse_variant(a.variant) != v) {
    throw UsageError("model file holds variant " + std::string(to_string(v)) +
                     " but --variant " + a.variant + " was given");
  }
  std::optional<SpeakerEmbedding> emb;
  if (!a.embedding.empty()) emb = load_embedding(a.embedding);
  if (uses_embedding(v) && !emb) {
    throw UsageError(std::string("variant ") + to_string(v) + " needs --embedding");
  }
  const AudioBuffer audio = read_wav(a.in);
  const AudioBuffer enhanced = enhance_offline(model, audio, emb ? &*emb : nullptr);
  write_wav(a.out, enhanced);
  out << "wrote " << a.out << " (" << enhanced.samples.size() << " samples, "
      << to_string(v) << ")\n";
}

void cmd_mix(const Globals& g, const MixArgs& a, std::ostream& out) {
  DatasetOptions o;
  o.hours = a.hours;
  o.clip_seconds = a.clip_secs;
  o.dist.mode = parse_draw_mode(a.dist);
  if (a.weights.size() != 3) throw ConfigError("--weights takes three values (pn,ps,psn)");
  std::copy(a.weights.begin(), a.weights.end(), o.dist.weights.begin());
  o.dist.validate();
  o.seed = g.seed;
  o.jobs = g.jobs;
  const CorpusIndex corpus = index_corpus(a.target_dir, a.interf_dir, a.noise_dir, a.clip_secs);
  const Manifest m = generate_dataset(corpus, o, a.out);
  out << "wrote " << m.rows.size() << " clips to " << a.out << "\n";
}

std::vector<TrainExample> load_set(const Manifest& m, const EmbeddingMap* emb, int jobs) {
  if (m.rows.empty()) throw UsageError("manifest has no clips");
  return load_examples(m, emb, jobs);
}

void cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const Manifest train_m = read_manifest(manifest_path(a.manifest));
  ModelConfig cfg;
  cfg.variant = parse_variant(a.variant);
  cfg.conv_channels = a.conv_channels;
  cfg.erb_gru_hidden = a.erb_gru_hidden;
  cfg.df_gru_hidden = a.df_gru_hidden;
  cfg.dsp.erb_bands = a.erb_bands;
  cfg.dsp.f_df = a.f_df;
  cfg.seed = g.seed;

  EmbeddingMap emb;
  const bool personal = uses_embedding(cfg.variant);
  if (personal) {
    if (a.embeddings_dir.empty()) {
      throw UsageError(std::string("variant ") + a.variant + " needs --embeddings-dir");
    }
    emb = load_embeddings_dir(a.embeddings_dir);
  }
  const EmbeddingMap* ep = personal ? &emb : nullptr;
  std::vector<TrainExample> train = load_set(train_m, ep, g.jobs);
  std::vector<TrainExample> val;
  if (!a.val_manifest.empty()) {
    val = load_set(read_manifest(manifest_path(a.val_manifest)), ep, g.jobs);
  } else {
    // Every tenth clip is held out.
    std::vector<TrainExample> rest;
    for (std::size_t i = 0; i < train.size(); ++i) {
      (i % 10 == 9 ? val : rest).push_back(std::move(train[i]));
    }
    if (val.empty()) throw UsageError("need --val-manifest or at least 10 training clips");
    train = std::move(rest);
  }
  cfg.dsp.sample_rate = train.front().mixture.sample_rate;
  cfg.validate();
  const Model model = build_model(cfg);

  TrainConfig tc;
  tc.lr = a.lr;
  tc.weight_decay = a.weight_decay;
  tc.patience = a.patience;
  tc.max_epochs = a.epochs;
  tc.crop_seconds = a.crop_secs;
  tc.seed = g.seed;
  tc.jobs = resolve_jobs(g.jobs);
  tc.validate();

  const fs::path ckpt(a.out);
  log_info("training " + std::string(to_string(cfg.variant)) + " (" +
           std::to_string(model.param_count()) + " params) on " +
           std::to_string(train.size()) + " clips, validating on " +
           std::to_string(val.size()));
  const TrainResult r = toy_train(
      model, train, val, tc, [&](const EpochRecord& e, bool improved, const ParamStore& p) {
        log_info("epoch " + std::to_string(e.epoch) + " batch " + std::to_string(e.batch_size) +
                 " train " + fmt("%.6g", e.train_loss) + " val " + fmt("%.6g", e.val_loss) +
                 (improved ? " *" : ""));
        if (improved) save_checkpoint(model, p, e.epoch, e.val_loss, ckpt);
      });
  write_file_atomic(ckpt.string() + ".history.csv", history_csv(r.history));
  out << "epochs " << r.history.size() << (r.early_stopped ? " (early stop)" : "") << "\n"
      << "best_epoch " << r.best_epoch << " val_loss " << fmt("%.6g", r.best_val_loss) << "\n"
      << "train_loss " << fmt("%.6g", r.initial_train_loss) << " -> "
      << fmt("%.6g", r.final_train_loss) << "\n"
      << "wrote " << ckpt.string() << "\n";
}

void cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const Manifest m = read_manifest(manifest_path(a.manifest));
  EmbeddingMap emb;
  if (!a.embeddings_dir.empty()) {
    emb = load_embeddings_dir(a.embeddings_dir);
  } else if (uses_embedding(model.config().variant)) {
    throw UsageError(std::string("variant ") + to_string(model.config().variant) +
                     " needs --embeddings-dir");
  }
  const EvalReport r = evaluate(model, m, emb, resolve_jobs(g.jobs));
  if (!a.report.empty()) write_file_atomic(a.report, r.csv());
  out << r.summary();
}

void cmd_bench(const Globals& g, const BenchArgs& a, std::ostream& out) {
  std::optional<Model> model;
  if (!a.model.empty()) {
    model = load_model(a.model);
  } else {
    ModelConfig cfg;
    cfg.variant = parse_variant(a.variant);
    cfg.seed = g.seed;
    model = build_model(cfg);
  }
  const ComplexityReport r = measure_rtf(*model, a.secs, a.reps, g.seed);
  out << ComplexityReport::csv_header() << "\n" << r.csv_row() << "\n";
}

void cmd_embed(const Globals& g, const EmbedArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.in)) {
    save_embedding(a.out, toy_embed(read_wav(a.in)));
    out << "wrote " << a.out << "\n";
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.in)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .wav files in " + a.in);
  fs::create_directories(a.out);
  parallel_for(files.size(), resolve_jobs(g.jobs), [&](std::size_t i) {
    const fs::path dst = fs::path(a.out) / (files[i].stem().string() + ".emb");
    save_embedding(dst, toy_embed(read_wav(files[i])));
  });
  out << "wrote " << files.size() << " embeddings to " << a.out << "\n";
}

const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

void cmd_inspect(const std::string& path, std::ostream& out) {
  const ParamStore s = load_container(path);
  out << "container " << path << "\n";
  out << "metadata (" << s.metadata().size() << ")\n";
  for (const auto& [k, v] : s.metadata()) out << "  " << k << " = " << v << "\n";
  out << "tensors (" << s.size() << ", " << s.scalar_count() << " values)\n";
  for (const auto& [name, t] : s.tensors()) {
    out << "  " << name << " " << dtype_name(t.dtype()) << " " << shape_string(t.shape())
        << "\n";
  }
  if (s.has_meta("variant")) {
    const Model m = model_from_store(s);
    out << "model " << to_string(m.config().variant) << " params " << m.param_count()
        << " macs_per_s " << m.macs_per_second() << "\n";
  }
}

void cmd_toy(const Globals& g, const ToyArgs& a, std::ostream& out) {
  ToyCorpusOptions o;
  o.speakers = a.speakers;
  o.files_per_speaker = a.files_per_speaker;
  o.file_seconds = a.file_secs;
  o.noise_files = a.noise_files;
  o.enroll_seconds = a.enroll_secs;
  o.sample_rate = a.sample_rate;
  o.seed = g.seed;
  const ToyCorpus c = make_toy_corpus(a.out, o);
  out << "speech " << c.speech_dir.string() << "\n"
      << "noise " << c.noise_dir.string() << "\n"
      << "enroll " << c.enroll_dir.string() << "\n";
}

const std::vector<std::string> kVariantNames = {"baseline", "unified", "dual_both", "dual_erb",
                                                "dual_df"};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized speech enhancement engine", "pse"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read settings from a key=value file (flags override it)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads (0: all cores, capped by PSE_NUM_THREADS)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("-v,--verbose", g.verbose, "More log output (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");

  const auto variants = CLI::IsMember(kVariantNames);

  EnhanceArgs ea;
  auto* enh = app.add_subcommand("enhance", "Enhance one WAV file");
  enh->add_option("--in", ea.in, "Noisy input WAV")->required()->check(CLI::ExistingFile);
  enh->add_option("--out", ea.out, "Output WAV")->required();
  enh->add_option("--model", ea.model, "Model container")->required()->check(CLI::ExistingFile);
  enh->add_option("--embedding", ea.embedding, "Target speaker embedding")
      ->check(CLI::ExistingFile);
  enh->add_option("--variant", ea.variant, "Expected variant; refused if the file differs")
      ->check(variants);

  MixArgs ma;
  auto* mix = app.add_subcommand("mix", "Generate a mixture dataset");
  mix->add_option("--target-dir", ma.target_dir, "Target speech root")
      ->required()
      ->check(CLI::ExistingDirectory);
  mix->add_option("--interf-dir", ma.interf_dir, "Interfering speech root")
      ->check(CLI::ExistingDirectory);
  mix->add_option("--noise-dir", ma.noise_dir, "Noise root")->check(CLI::ExistingDirectory);
  mix->add_option("--hours", ma.hours, "Total duration")->capture_default_str();
  mix->add_option("--out", ma.out, "Output directory")->required();
  mix->add_option("--dist", ma.dist, "SNR/SIR draw distribution")
      ->check(CLI::IsMember({"gaussian", "uniform"}))
      ->capture_default_str();
  mix->add_option("--clip-secs", ma.clip_secs, "Clip length")->capture_default_str();
  mix->add_option("--weights", ma.weights, "Category weights pn,ps,psn")
      ->delimiter(',')
      ->expected(3);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train-toy", "Train a model on a generated dataset");
  tr->add_option("--manifest", ta.manifest, "Training manifest or dataset directory")
      ->required()
      ->check(CLI::ExistingPath);
  tr->add_option("--val-manifest", ta.val_manifest,
                 "Validation manifest (default: every tenth training clip)")
      ->check(CLI::ExistingPath);
  tr->add_option("--embeddings-dir", ta.embeddings_dir, "Directory of <speaker>.emb files")
      ->check(CLI::ExistingDirectory);
  tr->add_option("--variant", ta.variant, "Model variant")->check(variants)->capture_default_str();
  tr->add_option("--out", ta.out, "Checkpoint path (best epoch)")->required();
  tr->add_option("--epochs", ta.epochs, "Maximum epochs")->capture_default_str();
  tr->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--weight-decay", ta.weight_decay, "L2 weight decay")->capture_default_str();
  tr->add_option("--patience", ta.patience, "Early-stopping patience")->capture_default_str();
  tr->add_option("--crop-secs", ta.crop_secs, "Random crop per clip and epoch (0: whole clip)")
      ->capture_default_str();
  tr->add_option("--conv-channels", ta.conv_channels)->capture_default_str();
  tr->add_option("--erb-gru-hidden", ta.erb_gru_hidden)->capture_default_str();
  tr->add_option("--df-gru-hidden", ta.df_gru_hidden)->capture_default_str();
  tr->add_option("--erb-bands", ta.erb_bands)->capture_default_str();
  tr->add_option("--f-df", ta.f_df, "Deep-filter cutoff in Hz")->capture_default_str();

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Score a model on a dataset");
  ev->add_option("--manifest", va.manifest, "Manifest or dataset directory")
      ->required()
      ->check(CLI::ExistingPath);
  ev->add_option("--model", va.model, "Model container")->required()->check(CLI::ExistingFile);
  ev->add_option("--embeddings-dir", va.embeddings_dir, "Directory of <speaker>.emb files")
      ->check(CLI::ExistingDirectory);
  ev->add_option("--report", va.report, "Per-clip CSV output");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Parameter count, MACs and real-time factor");
  be->add_option("--model", ba.model, "Model container")->check(CLI::ExistingFile);
  be->add_option("--variant", ba.variant, "Default-config variant when no --model is given")
      ->check(variants)
      ->capture_default_str();
  be->add_option("--secs", ba.secs, "Audio per run")->capture_default_str();
  be->add_option("--reps", ba.reps, "Timed runs (median reported)")->capture_default_str();

  EmbedArgs ma2;
  auto* em = app.add_subcommand("embed", "Toy enrollment embedding");
  em->add_option("--in", ma2.in, "Enrollment WAV, or a directory of them")
      ->required()
      ->check(CLI::ExistingPath);
  em->add_option("--out", ma2.out, "Embedding file, or output directory")->required();

  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "Dump container metadata and tensor shapes");
  in->add_option("--model", inspect_path, "Container file")->required()->check(CLI::ExistingFile);

  ToyArgs ya;
  auto* toy = app.add_subcommand("toy-corpus", "Write a synthetic speech and noise corpus");
  toy->add_option("--out", ya.out, "Output directory")->required();
  toy->add_option("--speakers", ya.speakers)->capture_default_str();
  toy->add_option("--files-per-speaker", ya.files_per_speaker)->capture_default_str();
  toy->add_option("--file-secs", ya.file_secs)->capture_default_str();
  toy->add_option("--noise-files", ya.noise_files)->capture_default_str();
  toy->add_option("--enroll-secs", ya.enroll_secs)->capture_default_str();
  toy->add_option("--sample-rate", ya.sample_rate)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  set_log_level(g.quiet ? LogLevel::kQuiet
                : g.verbose >= 2 ? LogLevel::kDebug
                : g.verbose == 1 ? LogLevel::kInfo
                                 : LogLevel::kWarn);
  try {
    if (*enh) cmd_enhance(g, ea, out);
    if (*mix) cmd_mix(g, ma, out);
    if (*tr) cmd_train(g, ta, out);
    if (*ev) cmd_eval(g, va, out);
    if (*be) cmd_bench(g, ba, out);
    if (*em) cmd_embed(g, ma2, out);
    if (*in) cmd_inspect(inspect_path, out);
    if (*toy) cmd_toy(g, ya, out);
  } catch (const UsageError& e) {
    err << "pse: error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "pse: error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    err << "pse: error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "pse: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "pse: error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace pse::cli
