// seqadv: train victims, run single attacks, benchmark, and summarize traces.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "seqadv/attacks.hpp"
#include "seqadv/bench.hpp"
#include "seqadv/data.hpp"
#include "seqadv/victims.hpp"

namespace fs = std::filesystem;
using namespace seqadv;
using json = nlohmann::json;

namespace {

struct TrainArgs {
  std::string model = "classifier";
  fs::path mnist_dir;
  fs::path out;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  std::size_t samples = 20000;
  std::size_t batch = 32;
  double lr = 1e-3;
};

struct AttackArgs {
  fs::path weights;
  std::string input;
  std::size_t index = 0;
  fs::path mnist_dir;
  std::string target;
  std::string method = "adaptive";
  fs::path trace;
  fs::path dump_dir = ".";
  double lr = 0.0;
  std::optional<std::size_t> max_iters;
};

struct BenchArgs {
  fs::path weights;
  std::string dataset;
  fs::path mnist_dir;
  std::size_t count = 10;
  std::string methods = "adaptive";
  std::string edits = "random";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  fs::path out;
  double lr = 0.0;
  std::size_t max_iters = 0;
};

struct TraceArgs {
  fs::path trace;
  fs::path report;
  std::string target;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("write failed: {}", path.string()));
}

int cmd_train(const TrainArgs& a) {
  const auto kind = victims::parse_kind(a.model);
  auto model = victims::init_model(kind, a.seed);
  victims::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.batch = a.batch;
  cfg.learning_rate = a.lr;
  cfg.on_epoch = [](const victims::EpochLog& l) {
    fmt::print("epoch {} loss {:.4f} train_acc {:.4f} time {:.1f}s\n", l.epoch, l.mean_loss, l.train_accuracy,
               l.seconds);
    std::fflush(stdout);
  };
  const auto train = data::load_mnist(a.mnist_dir, data::Split::train);
  if (kind == victims::ModelKind::classifier) {
    victims::train(model, train, cfg);
    const auto test = data::load_mnist(a.mnist_dir, data::Split::test);
    fmt::print("test accuracy {:.4f}\n", victims::accuracy(model, test));
  } else {
    const auto seq = data::synth_seqmnist(train, a.samples, Rng::derive(a.seed, 0x5e9));
    victims::train(model, seq, cfg);
    const auto held = bench::held_out_seqmnist(a.mnist_dir);
    fmt::print("held-out sequence accuracy {:.4f}\n", victims::sequence_accuracy(model, held));
  }
  victims::save(model, a.out);
  fmt::print("wrote {}\n", a.out.string());
  return 0;
}

grad::Tensor load_input(const AttackArgs& a) {
  if (a.input.starts_with("seqmnist:")) {
    if (a.mnist_dir.empty()) throw Error("seqmnist:<i> inputs need --mnist-dir");
    const auto held = bench::held_out_seqmnist(a.mnist_dir);
    const std::size_t i = std::stoul(a.input.substr(9));
    if (i >= held.size()) throw Error(fmt::format("held-out SeqMNIST has {} samples", held.size()));
    return held[i].pixels;
  }
  const fs::path path(a.input);
  if (path.extension() == ".pgm") return data::read_pgm(path);
  const auto images = data::load_idx_images(path);
  if (a.index >= images.size()) throw Error(fmt::format("{} holds {} images", path.string(), images.size()));
  return images[a.index];
}

json trace_json(const attacks::TraceRecord& r, std::string_view target) {
  json j;
  j["iter"] = r.iter;
  j["obj"] = r.obj;
  j["l2"] = r.l2;
  j["task"] = r.task;
  j["eta1"] = r.eta1 ? json(*r.eta1) : json(nullptr);
  j["eta2"] = r.eta2 ? json(*r.eta2) : json(nullptr);
  if (r.lambda) j["lambda"] = *r.lambda;
  j["decoded"] = r.decoded;
  j["align"] = r.align;
  j["target"] = target;
  return j;
}

int cmd_attack(const AttackArgs& a) {
  const auto model = victims::load(a.weights);
  const grad::Tensor x = load_input(a);
  const auto method = bench::parse_method(a.method);
  auto cfg = bench::config_for(model.kind, method, a.lr);
  if (a.max_iters) cfg.max_iters = *a.max_iters;
  cfg.record_trace = !a.trace.empty();
  const std::string source = attacks::decode(model, x);
  if (model.kind == victims::ModelKind::seqnet) {
    // Rejects non-digit and CTC-infeasible targets before any optimization.
    const auto label = victims::encode_digits(a.target);
    if (ctc::required_frames(label) > victims::kFrames) {
      throw InfeasibleLabelError(fmt::format("target '{}' needs more than {} frames", a.target, victims::kFrames));
    }
  }
  const bench::Sample sample{0, x, source};
  const auto r = bench::attack(model, sample, a.target, method, cfg);

  fs::create_directories(a.dump_dir);
  data::write_pgm(a.dump_dir / "original.pgm", x);
  grad::Tensor perturbation(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Gray 128 is zero; each gray level is a tenth of one input level.
    const double gray = std::clamp(128.0 + std::round(10.0 * 127.5 * (r.x_adv[i] - x[i])), 0.0, 255.0);
    perturbation[i] = data::normalize(static_cast<std::uint8_t>(gray));
  }
  data::write_pgm(a.dump_dir / "perturbation.pgm", perturbation);
  data::write_pgm(a.dump_dir / "adversarial.pgm", r.x_adv);
  const std::string quantized = attacks::decode(model, data::read_pgm(a.dump_dir / "adversarial.pgm"));

  if (!a.trace.empty()) {
    std::string lines;
    for (const auto& rec : r.trace) lines += trace_json(rec, a.target).dump() + "\n";
    write_file(a.trace, lines);
  }
  fmt::print("source={} target={} method={} success={} decoded={} pgm_decoded={} l2={} iterations={}\n",
             source.empty() ? "none" : source, a.target, method.name, r.success ? 1 : 0,
             r.decoded.empty() ? "none" : r.decoded, quantized.empty() ? "none" : quantized,
             r.success ? fmt::format("{:.6f}", r.l2) : std::string("na"), r.iterations);
  return 0;
}

int cmd_bench(const BenchArgs& a) {
  const auto model = victims::load(a.weights);
  const std::string expected = model.kind == victims::ModelKind::classifier ? "mnist" : "seqmnist";
  if (!a.dataset.empty() && a.dataset != expected) {
    throw Error(fmt::format("dataset '{}' does not match a {} model (expected '{}')", a.dataset,
                            victims::kind_name(model.kind), expected));
  }
  bench::Options opts;
  opts.methods = bench::parse_methods(a.methods);
  opts.edits = bench::parse_edits(a.edits);
  if (model.kind == victims::ModelKind::classifier) {
    for (const auto& e : opts.edits) {
      if (!e.random) throw Error("classifier benchmarks only support the 'random' edit");
    }
  }
  opts.seed = a.seed;
  opts.jobs = a.jobs;
  opts.learning_rate = a.lr;
  opts.max_iters = a.max_iters;
  const auto samples = bench::correct_samples(model, a.mnist_dir, a.count);
  const auto rows = bench::run(model, samples, opts);
  if (!a.out.empty()) write_file(a.out, bench::to_csv(rows));
  const auto reports = bench::report(rows);
  fmt::print("{}", bench::format_report(reports));
  return 0;
}

std::string csv_number(const json& v) {
  if (v.is_null()) return "na";
  return fmt::format("{}", v.get<double>());
}

int cmd_trace(const TraceArgs& a) {
  const std::string text = slurp(a.trace);
  std::string csv = "iteration,objective,l2,task_loss,eta1,eta2,decoded,alignment\n";
  std::optional<std::size_t> lock;
  std::size_t records = 0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json r;
    try {
      r = json::parse(line);
      const std::string decoded = r.at("decoded").get<std::string>();
      std::string align;
      for (const auto& c : r.at("align")) {
        if (!align.empty()) align += '-';
        align += std::to_string(c.get<int>());
      }
      csv += fmt::format("{},{},{},{},{},{},{},{}\n", r.at("iter").get<std::size_t>(), csv_number(r.at("obj")),
                         csv_number(r.at("l2")), csv_number(r.at("task")), csv_number(r.at("eta1")),
                         csv_number(r.at("eta2")), decoded.empty() ? "none" : decoded, align.empty() ? "none" : align);
      const std::string target = !a.target.empty() ? a.target : r.value("target", std::string());
      if (!lock && !target.empty() && decoded == target) lock = r.at("iter").get<std::size_t>();
    } catch (const json::exception& e) {
      throw Error(fmt::format("{}:{}: malformed trace record: {}", a.trace.string(), line_no, e.what()));
    }
    ++records;
  }
  if (!a.report.empty()) write_file(a.report, csv);
  fmt::print("records {}\nalignment lock {}\n", records, lock ? std::to_string(*lock) : "none");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on digit classifiers and CTC sequence recognizers"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a victim model and write its weights");
  t->add_option("--model", train.model, "classifier or seqnet")->check(CLI::IsMember({"classifier", "seqnet"}));
  t->add_option("--mnist-dir", train.mnist_dir, "Directory with the MNIST IDX files")->required();
  t->add_option("--out", train.out, "Weights file to write")->required();
  t->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
  t->add_option("--seed", train.seed, "Initialization, shuffling and synthesis seed")->capture_default_str();
  t->add_option("--samples", train.samples, "SeqMNIST training samples (seqnet)")->capture_default_str();
  t->add_option("--batch", train.batch, "Batch size")->capture_default_str();
  t->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();

  AttackArgs attack;
  auto* a = app.add_subcommand("attack", "Run one targeted attack and dump images and trace");
  a->add_option("--weights", attack.weights, "Weights file")->required();
  a->add_option("--input", attack.input, "PGM image, IDX image file, or seqmnist:<i>")->required();
  a->add_option("--index", attack.index, "Image index within an IDX file")->capture_default_str();
  a->add_option("--mnist-dir", attack.mnist_dir, "MNIST directory for seqmnist:<i> inputs");
  a->add_option("--target", attack.target, "Target label (digit string)")->required();
  a->add_option("--method", attack.method, "fixed:<lambda>, binary:<steps> or adaptive")->capture_default_str();
  a->add_option("--trace", attack.trace, "Line-delimited JSON trace output");
  a->add_option("--dump-dir", attack.dump_dir, "Directory for original/perturbation/adversarial PGMs")
      ->capture_default_str();
  a->add_option("--lr", attack.lr, "Override the attack learning rate");
  a->add_option("--max-iters", attack.max_iters, "Override the iteration budget per step (0 allowed)");

  BenchArgs bench_args;
  auto* b = app.add_subcommand("bench", "Benchmark attack methods over test samples");
  b->add_option("--weights", bench_args.weights, "Weights file")->required();
  b->add_option("--dataset", bench_args.dataset, "mnist or seqmnist (defaults to the model's)")
      ->check(CLI::IsMember({"mnist", "seqmnist"}));
  b->add_option("--mnist-dir", bench_args.mnist_dir, "Directory with the MNIST IDX files")->required();
  b->add_option("--count", bench_args.count, "Number of correctly recognised samples")->capture_default_str();
  b->add_option("--methods", bench_args.methods, "Comma-separated methods")->capture_default_str();
  b->add_option("--edits", bench_args.edits, "Comma-separated: random, insert, insert_repeat, substitute, delete")
      ->capture_default_str();
  b->add_option("--seed", bench_args.seed, "Target sampling seed")->capture_default_str();
  b->add_option("--jobs", bench_args.jobs, "Parallel attack workers")->capture_default_str();
  b->add_option("--out", bench_args.out, "CSV output");
  b->add_option("--lr", bench_args.lr, "Override the attack learning rate");
  b->add_option("--max-iters", bench_args.max_iters, "Override the iteration budget per step");

  TraceArgs trace;
  auto* tr = app.add_subcommand("trace", "Convert a trace to CSV and report the alignment lock");
  tr->add_option("--trace", trace.trace, "Trace JSON (one record per line)")->required();
  tr->add_option("--report", trace.report, "CSV output");
  tr->add_option("--target", trace.target, "Override the target recorded in the trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*t) return cmd_train(train);
    if (*a) return cmd_attack(attack);
    if (*b) return cmd_bench(bench_args);
    if (*tr) return cmd_trace(trace);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
