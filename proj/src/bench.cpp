#include "seqadv/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

namespace seqadv::bench {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto at = text.find(sep);
    out.push_back(text.substr(0, at));
    if (at == std::string_view::npos) break;
    text.remove_prefix(at + 1);
  }
  return out;
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) throw Error(fmt::format("bad {} '{}'", what, text));
  return v;
}

std::size_t parse_size(std::string_view text, std::string_view what) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) throw Error(fmt::format("bad {} '{}'", what, text));
  return v;
}

}  // namespace

MethodSpec parse_method(std::string_view text) {
  MethodSpec m;
  m.name = std::string(text);
  if (text == "adaptive") {
    m.method = attacks::Method::adaptive;
  } else if (text.starts_with("fixed:")) {
    m.method = attacks::Method::fixed;
    m.lambda = parse_double(text.substr(6), "lambda");
    if (!(m.lambda > 0.0)) throw Error(fmt::format("lambda must be positive in '{}'", text));
  } else if (text.starts_with("binary:")) {
    m.method = attacks::Method::binary;
    m.steps = parse_size(text.substr(7), "step count");
    if (m.steps < 1) throw Error(fmt::format("binary search needs at least one step in '{}'", text));
  } else {
    throw Error(fmt::format("unknown method '{}' (expected fixed:<lambda>, binary:<steps> or adaptive)", text));
  }
  return m;
}

std::vector<MethodSpec> parse_methods(std::string_view list) {
  std::vector<MethodSpec> out;
  for (auto item : split(list, ',')) out.push_back(parse_method(item));
  return out;
}

EditSpec parse_edit(std::string_view text) {
  EditSpec e;
  e.name = std::string(text);
  if (text == "random") return e;
  e.random = false;
  e.op = attacks::parse_edit(text);
  return e;
}

std::vector<EditSpec> parse_edits(std::string_view list) {
  std::vector<EditSpec> out;
  for (auto item : split(list, ',')) out.push_back(parse_edit(item));
  return out;
}

std::string make_target(std::string_view label, const EditSpec& edit, std::uint64_t seed, std::size_t id) {
  Rng rng(Rng::derive(seed, id, static_cast<std::uint64_t>(edit.random ? 0 : 1 + static_cast<int>(edit.op))));
  if (edit.random) return attacks::sample_target(label, attacks::digit_alphabet(), rng);
  return attacks::random_edit(label, edit.op, attacks::digit_alphabet().symbols, rng);
}

std::vector<data::SeqSample> held_out_seqmnist(const std::filesystem::path& mnist_dir) {
  const auto test = data::load_mnist(mnist_dir, data::Split::test);
  return data::synth_seqmnist(test, kHeldOutSize, kHeldOutSeed);
}

std::vector<Sample> correct_samples(const victims::Model& model, const std::filesystem::path& mnist_dir,
                                    std::size_t count) {
  std::vector<Sample> out;
  if (model.kind == victims::ModelKind::classifier) {
    const auto test = data::load_mnist(mnist_dir, data::Split::test);
    const auto predicted = victims::predict(model, test);
    for (std::size_t i = 0; i < test.size() && out.size() < count; ++i) {
      const std::string label(1, static_cast<char>('0' + test[i].label));
      if (predicted[i] == test[i].label) out.push_back({i, test[i].pixels, label});
    }
  } else {
    const auto held = held_out_seqmnist(mnist_dir);
    const auto predicted = victims::predict(model, held);
    for (std::size_t i = 0; i < held.size() && out.size() < count; ++i) {
      if (predicted[i] == held[i].digits) out.push_back({i, held[i].pixels, held[i].digits});
    }
  }
  if (out.size() < count) {
    throw Error(fmt::format("only {} correctly recognised test samples, {} requested", out.size(), count));
  }
  return out;
}

attacks::AttackConfig config_for(victims::ModelKind kind, const MethodSpec& method, double learning_rate,
                                 std::size_t max_iters) {
  auto cfg = attacks::default_config(kind, method.method);
  if (method.method == attacks::Method::binary) cfg.search_steps = method.steps;
  if (learning_rate > 0.0) cfg.learning_rate = learning_rate;
  if (max_iters > 0) cfg.max_iters = max_iters;
  return cfg;
}

attacks::AttackResult attack(const victims::Model& model, const Sample& sample, std::string_view target,
                             const MethodSpec& method, const attacks::AttackConfig& config) {
  switch (method.method) {
    case attacks::Method::fixed:
      return attacks::attack_fixed(model, sample.x, sample.label, target, method.lambda, config);
    case attacks::Method::binary:
      return attacks::attack_binary(model, sample.x, sample.label, target, method.steps, config);
    case attacks::Method::adaptive:
      return attacks::attack_adaptive(model, sample.x, sample.label, target, config);
  }
  throw Error("unknown method");
}

std::vector<Row> run(const victims::Model& model, std::span<const Sample> samples, const Options& options) {
  if (options.methods.empty() || options.edits.empty()) throw Error("bench needs at least one method and edit");
  struct Task {
    const Sample* sample;
    const EditSpec* edit;
    const MethodSpec* method;
    std::string target;
  };
  std::vector<Task> tasks;
  for (const auto& s : samples) {
    for (const auto& e : options.edits) {
      const std::string target = make_target(s.label, e, options.seed, s.id);
      for (const auto& m : options.methods) tasks.push_back({&s, &e, &m, target});
    }
  }

  std::vector<Row> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      try {
        const auto start = std::chrono::steady_clock::now();
        const auto r = attack(model, *t.sample, t.target, *t.method,
                              config_for(model.kind, *t.method, options.learning_rate, options.max_iters));
        const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
        rows[i] = {t.sample->id, t.method->name, t.edit->name, t.target, r.success, r.l2, r.iterations, elapsed.count()};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
        return;
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

std::string to_csv(std::span<const Row> rows) {
  std::string out(kCsvHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{:.3f}\n", r.id, r.method, r.edit, r.target, r.success ? 1 : 0,
                       r.success ? fmt::format("{:.6f}", r.l2) : std::string("na"), r.iterations, r.wall_ms);
  }
  return out;
}

std::vector<Row> parse_csv(std::string_view text) {
  std::vector<Row> rows;
  bool header = true;
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    if (header) {
      if (line != kCsvHeader) throw Error(fmt::format("unexpected CSV header '{}'", line));
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 8) throw Error(fmt::format("CSV row has {} fields: '{}'", f.size(), line));
    Row r;
    r.id = parse_size(f[0], "id");
    r.method = std::string(f[1]);
    r.edit = std::string(f[2]);
    r.target = std::string(f[3]);
    r.success = f[4] == "1";
    r.l2 = f[5] == "na" ? 0.0 : parse_double(f[5], "l2");
    r.iterations = parse_size(f[6], "iterations");
    r.wall_ms = parse_double(f[7], "wall_ms");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MethodReport> report(std::span<const Row> rows) {
  std::vector<MethodReport> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MethodReport& m) { return m.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = out.end() - 1;
    }
    ++it->samples;
    it->total_iterations += r.iterations;
    if (r.success) {
      ++it->successes;
      it->mean_l2 += r.l2;
      it->mean_iterations += static_cast<double>(r.iterations);
    }
  }
  for (auto& m : out) {
    m.success_rate = static_cast<double>(m.successes) / static_cast<double>(m.samples);
    if (m.successes > 0) {
      m.mean_l2 /= static_cast<double>(m.successes);
      m.mean_iterations /= static_cast<double>(m.successes);
    }
  }
  return out;
}

std::string format_report(std::span<const MethodReport> reports) {
  std::string out = fmt::format("{:<14} {:>7} {:>9} {:>9} {:>10} {:>10}\n", "method", "samples", "success", "mean_l2",
                                "mean_iter", "total_iter");
  for (const auto& m : reports) {
    const std::string l2 = m.successes > 0 ? fmt::format("{:.4f}", m.mean_l2) : "na";
    const std::string it = m.successes > 0 ? fmt::format("{:.2f}", m.mean_iterations) : "na";
    out += fmt::format("{:<14} {:>7} {:>8.2f}% {:>9} {:>10} {:>10}\n", m.method, m.samples, 100.0 * m.success_rate,
                       l2, it, m.total_iterations);
  }
  return out;
}

}  // namespace seqadv::bench
