#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "gsr/checkpoint.hpp"
#include "gsr/dataconfig.hpp"
#include "gsr/eval.hpp"
#include "gsr/train.hpp"
#include "gsr/wav.hpp"

namespace {

// Exit codes: 0 success, 1 usage/config, 2 data, 3 divergence.
enum : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

std::string with_commas(long long n) {
  std::string digits = std::to_string(n);
  std::string out;
  int until_comma = static_cast<int>(digits.size()) % 3;
  if (until_comma == 0) until_comma = 3;
  for (char c : digits) {
    if (until_comma == 0) {
      out += ',';
      until_comma = 3;
    }
    out += c;
    --until_comma;
  }
  return out;
}

std::string kilo_hours(double hours) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2fk", hours / 1000.0);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// GSR_DATA_ROOT prefixes relative descriptor paths.
std::string under_data_root(const std::string& path) {
  const char* root = std::getenv("GSR_DATA_ROOT");
  if (root == nullptr || *root == '\0') return path;
  return (std::filesystem::path(root) / path).string();
}

struct ManifestArgs {
  std::string version;
  std::vector<std::string> descriptors;
  std::string out;
};

int run_manifest(const ManifestArgs& args) {
  std::vector<gsr::DatasetDescriptor> descriptors;
  for (const std::string& p : args.descriptors)
    descriptors.push_back(gsr::read_descriptor(under_data_root(p)));
  const gsr::DataConfig config = gsr::compose(args.version, descriptors);

  const std::vector<std::string> violations = gsr::validate(config);
  if (!violations.empty()) {
    for (const std::string& v : violations)
      std::fprintf(stderr, "manifest: %s\n", v.c_str());
    return kDataError;
  }

  std::printf("dataset\tspeakers\tutterances\thours\n");
  for (const auto& member : config.members) {
    const gsr::DatasetTotals t = member.totals();
    std::printf("%s\t%s\t%s\t%s\n", member.name.c_str(),
                with_commas(t.n_speakers).c_str(),
                with_commas(t.n_utterances).c_str(),
                kilo_hours(t.hours).c_str());
  }
  std::printf("total\t%s\t%s\t%s\n",
              with_commas(config.totals.n_speakers).c_str(),
              with_commas(config.totals.n_utterances).c_str(),
              kilo_hours(config.totals.hours).c_str());

  if (!args.out.empty()) {
    std::vector<gsr::UtteranceRecord> records;
    for (const auto& member : config.members)
      records.insert(records.end(), member.records.begin(),
                     member.records.end());
    gsr::write_manifest(args.out, records);
  }
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 1;
};

int run_train(const TrainArgs& args) {
  gsr::TrainConfig cfg = gsr::parse_train_config(slurp(args.config));
  if (args.seed >= 0) cfg.seed = static_cast<unsigned>(args.seed);
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (cfg.out_dir.empty()) cfg.out_dir = ".";

  const std::vector<gsr::UtteranceRecord> manifest =
      gsr::read_manifest(cfg.data_manifest);
  std::filesystem::create_directories(cfg.out_dir);
  const gsr::TrainResult result = gsr::train(cfg, manifest);

  const std::string ckpt_path = cfg.out_dir + "/checkpoint.gsrm";
  gsr::save_checkpoint(ckpt_path, result.config_json, result.params);
  const std::string metrics_path = cfg.out_dir + "/metrics.tsv";
  {
    std::ofstream out(metrics_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + metrics_path + "'");
    out << result.metrics;
  }

  std::printf("steps %lld\n", cfg.max_steps);
  std::printf("classes %d\n", result.n_classes);
  std::printf("initial_loss %.6f\n", result.initial_loss);
  std::printf("final_loss %.6f\n", result.final_loss);
  std::printf("checkpoint %s\n", ckpt_path.c_str());
  std::printf("metrics %s\n", metrics_path.c_str());
  return kOk;
}

struct EmbedArgs {
  std::string checkpoint;
  std::string wavs;
  std::string out;
  int threads = 1;
};

int run_embed(const EmbedArgs& args) {
  const gsr::Checkpoint ckpt = gsr::load_checkpoint(args.checkpoint);
  const gsr::ModelSpec spec = gsr::parse_model_spec(ckpt.config_json);

  // One wav per line: `id<TAB>path` or a bare path doubling as its id.
  std::vector<std::pair<std::string, std::string>> wavs;
  {
    std::istringstream in(slurp(args.wavs));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        wavs.emplace_back(line, line);
      else
        wavs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
  }

  std::vector<gsr::SpeakerEmbedding> embeddings(wavs.size());
  const int n_threads = std::max(
      1, std::min(args.threads, static_cast<int>(std::max<std::size_t>(
                                    1, wavs.size()))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= wavs.size()) return;
      try {
        const gsr::Waveform wave = gsr::read_wav(wavs[i].second);
        embeddings[i] = gsr::embed_waveform(wave, ckpt.params, spec);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(wavs.size());
        return;
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::ostringstream body;
  for (std::size_t i = 0; i < wavs.size(); ++i) {
    body << wavs[i].first;
    char buf[32];
    for (double v : embeddings[i]) {
      std::snprintf(buf, sizeof(buf), "%.10g", v);
      body << '\t' << buf;
    }
    body << '\n';
  }
  if (args.out.empty()) {
    std::fputs(body.str().c_str(), stdout);
  } else {
    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + args.out + "'");
    out << body.str();
  }
  return kOk;
}

struct EvalArgs {
  std::string trials;
  std::string format = "auto";
  std::string protocol;
  std::string embeddings;
  std::string scores;
  std::string out;
  int threads = 1;
};

std::unordered_map<std::string, gsr::SpeakerEmbedding> read_embeddings(
    const std::string& path) {
  std::unordered_map<std::string, gsr::SpeakerEmbedding> out;
  std::istringstream in(slurp(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id;
    if (!std::getline(fields, id, '\t'))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": empty row");
    gsr::SpeakerEmbedding e;
    std::string tok;
    while (std::getline(fields, tok, '\t')) {
      try {
        e.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": bad number '" + tok + "'");
      }
    }
    if (e.empty())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": no vector components");
    out[id] = std::move(e);
  }
  return out;
}

int run_eval(const EvalArgs& args) {
  if (args.embeddings.empty() == args.scores.empty())
    throw std::invalid_argument(
        "eval: give exactly one of --embeddings or --scores");

  gsr::TrialFormat format;
  if (args.format == "auto")
    format = gsr::TrialFormat::auto_detect;
  else if (args.format == "vox")
    format = gsr::TrialFormat::vox;
  else if (args.format == "sre")
    format = gsr::TrialFormat::sre;
  else
    throw std::invalid_argument("eval: unknown format '" + args.format +
                                "' (auto|vox|sre)");

  const std::vector<gsr::Trial> trials =
      gsr::load_trial_list(args.trials, format, args.protocol);

  gsr::ScoreSet set;
  if (!args.embeddings.empty()) {
    set = gsr::score_trials(read_embeddings(args.embeddings), trials);
  } else {
    std::unordered_map<std::string, double> by_pair;
    std::istringstream in(slurp(args.scores));
    std::string enrol, test;
    double score;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream fields(line);
      if (!(fields >> enrol >> test >> score))
        throw std::runtime_error(args.scores + ":" +
                                 std::to_string(line_no) +
                                 ": expected `enrol test score`");
      by_pair[enrol + "\t" + test] = score;
    }
    set.trials = trials;
    for (const auto& t : trials) {
      const auto it = by_pair.find(t.enrol_id + "\t" + t.test_id);
      if (it == by_pair.end())
        throw std::runtime_error("no score for trial '" + t.enrol_id + " " +
                                 t.test_id + "'");
      set.scores.push_back(it->second);
    }
  }

  if (!args.out.empty()) {
    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + args.out + "'");
    char buf[32];
    for (std::size_t i = 0; i < set.trials.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.10g", set.scores[i]);
      out << set.trials[i].enrol_id << '\t' << set.trials[i].test_id << '\t'
          << buf << '\n';
    }
  }

  long long n_target = 0, n_nontarget = 0;
  for (const auto& t : set.trials)
    t.label == gsr::TrialLabel::target ? ++n_target : ++n_nontarget;
  const gsr::EerResult r = gsr::compute_eer(set);

  std::printf("protocol %s\n",
              args.protocol.empty() ? "-" : args.protocol.c_str());
  std::printf("n_target %lld\n", n_target);
  std::printf("n_nontarget %lld\n", n_nontarget);
  std::printf("eer %.4f\n", r.eer);
  std::printf("eer_pct %.2f\n", 100.0 * r.eer);
  std::printf("threshold %.6f\n", r.threshold);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speaker embedding toolkit"};
  app.require_subcommand(1);

  ManifestArgs manifest_args;
  CLI::App* manifest = app.add_subcommand(
      "manifest", "compose a data configuration and print its totals");
  manifest->add_option("--version", manifest_args.version, "v0..v4")
      ->required();
  manifest
      ->add_option("--descriptor", manifest_args.descriptors,
                   "dataset descriptor tsv (repeatable)")
      ->required();
  manifest->add_option("--out", manifest_args.out,
                       "write the composed manifest here");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "run the optimization loop");
  train->add_option("--config", train_args.config, "json training config")
      ->required();
  train->add_option("--seed", train_args.seed, "override the config seed");
  train->add_option("--threads", train_args.threads, "worker threads");
  train->add_option("--out", train_args.out, "artifact directory");

  EmbedArgs embed_args;
  CLI::App* embed =
      app.add_subcommand("embed", "embed wav files with a trained model");
  embed->add_option("--checkpoint", embed_args.checkpoint, "model file")
      ->required();
  embed
      ->add_option("--wavs", embed_args.wavs,
                   "list file: `id<TAB>path` or bare paths")
      ->required();
  embed->add_option("--out", embed_args.out, "embedding tsv (default stdout)");
  embed->add_option("--threads", embed_args.threads, "worker threads");

  EvalArgs eval_args;
  CLI::App* eval =
      app.add_subcommand("eval", "score trials and report the error rate");
  eval->add_option("--trials", eval_args.trials, "trial list")->required();
  eval->add_option("--format", eval_args.format, "auto|vox|sre");
  eval->add_option("--protocol", eval_args.protocol,
                   "enforce a published trial inventory");
  eval->add_option("--embeddings", eval_args.embeddings,
                   "embedding tsv from `embed`");
  eval->add_option("--scores", eval_args.scores,
                   "precomputed `enrol test score` file");
  eval->add_option("--out", eval_args.out, "write per-trial scores here");
  eval->add_option("--threads", eval_args.threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (manifest->parsed()) return run_manifest(manifest_args);
    if (train->parsed()) return run_train(train_args);
    if (embed->parsed()) return run_embed(embed_args);
    return run_eval(eval_args);
  } catch (const gsr::training_diverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
}
