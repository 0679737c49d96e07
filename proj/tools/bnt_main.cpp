// bnt: benchmark runner and metric calculator.
//
//   bnt run --config <path> [--format table|csv] [--out <dir>] [--jobs <n>] [--seed <int>]
//   bnt metrics --pred <csv> --truth <csv> [--d-used <int>]
//
// Exit status: 0 success, 1 configuration or input error, 2 model failure
// (the report is still written).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "bnt/bnt.hpp"

namespace {

bnt::Vector first_column(const std::string& path) {
  const auto table = bnt::load_csv(path);
  if (table.cols() < 1) throw bnt::DataError(path + ": no columns");
  if (!table.is_numeric(0) || table.missing[0] != 0) {
    throw bnt::DataError(path + ": first column must be numeric and complete");
  }
  return table.values.col(0);
}

int cmd_run(const std::string& config, const std::string& format, const std::string& out, std::size_t jobs,
            std::optional<std::uint64_t> seed) {
  bnt::ExperimentConfig cfg;
  try {
    cfg = bnt::load_config(config);
    if (seed) cfg.base_seed = *seed;
  } catch (const bnt::Error& e) {
    std::cerr << "bnt: " << e.what() << '\n';
    return 1;
  }
  std::vector<bnt::ResultRow> rows;
  try {
    rows = bnt::run_experiment(cfg, jobs);
  } catch (const bnt::Error& e) {
    std::cerr << "bnt: " << e.what() << '\n';
    return 1;
  }
  const auto fmt = format == "csv" ? bnt::ReportFormat::csv : bnt::ReportFormat::table;
  try {
    if (!out.empty()) bnt::emit_report(rows, fmt, out);
  } catch (const bnt::Error& e) {
    std::cerr << "bnt: " << e.what() << '\n';
    return 1;
  }
  if (fmt == bnt::ReportFormat::table) {
    bnt::write_table(std::cout, rows);
  } else {
    bnt::write_summary_csv(std::cout, rows);
  }
  const auto failures = bnt::failure_count(rows);
  if (failures) {
    for (const auto& row : rows) {
      for (const auto& r : row.repeats) {
        if (!r.ok) std::cerr << "bnt: " << r.dataset << '/' << r.model << " repeat " << r.repeat << ": " << r.error << '\n';
      }
    }
    return 2;
  }
  return 0;
}

int cmd_metrics(const std::string& pred, const std::string& truth, std::size_t d_used) {
  try {
    const auto m = bnt::compute_metrics(first_column(truth), first_column(pred), d_used);
    std::printf("n,%zu\nmae,%.17g\nmape,%.17g\nrmse,%.17g\n", m.n, m.mae, m.mape, m.rmse);
    std::printf("r2,%s\nadj_r2,%s\n", bnt::detail::fmt_exact(m.r2).c_str(), bnt::detail::fmt_exact(m.adj_r2).c_str());
    if (m.mape_skipped) std::printf("mape_skipped,%zu\n", m.mape_skipped);
  } catch (const bnt::Error& e) {
    std::cerr << "bnt: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural tree regression benchmarks"};
  app.require_subcommand(1);

  std::string format = "table";
  std::string out;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  app.add_option("--format", format, "report format")->check(CLI::IsMember({"table", "csv"}));
  app.add_option("--out", out, "directory for report files");
  app.add_option("--jobs", jobs, "concurrent fits")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "override base_seed");

  std::string config;
  auto* run = app.add_subcommand("run", "run the benchmark protocol from a config file");
  run->add_option("--config", config, "key=value config file")->required();
  run->fallthrough();

  std::string pred, truth;
  std::size_t d_used = 0;
  auto* metrics = app.add_subcommand("metrics", "score predictions against truth");
  metrics->add_option("--pred", pred, "CSV with predictions in the first column")->required();
  metrics->add_option("--truth", truth, "CSV with observed values in the first column")->required();
  metrics->add_option("--d-used", d_used, "input count for adjusted R^2");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*run) return cmd_run(config, format, out, jobs, seed);
  return cmd_metrics(pred, truth, d_used);
}
