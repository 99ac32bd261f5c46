#include "unetlite/analyzer.hpp"

#include <fmt/format.h>

namespace unetlite::analyzer {

namespace {

void add_share(PathShares& shares, PathKind path, double value) {
  switch (path) {
    case PathKind::encoder: shares.encoder += value; break;
    case PathKind::middle: shares.middle += value; break;
    case PathKind::decoder: shares.decoder += value; break;
    case PathKind::final: shares.final += value; break;
  }
}

}  // namespace

CostReport analyze(const UNetConfig& config) {
  CostReport report;
  report.config = config;
  for (const auto& layer : layer_plan(config)) {
    CostRow row{layer.name, layer.path, layer.kind, layer.params(), layer.macs(),
                {1, layer.out_channels, layer.out_h, layer.out_w}};
    report.total_params += row.params;
    report.total_macs += row.macs;
    report.rows.push_back(std::move(row));
  }
  const double params = static_cast<double>(report.total_params);
  const double macs = static_cast<double>(report.total_macs);
  for (const auto& row : report.rows) {
    add_share(report.shares.params, row.path, static_cast<double>(row.params) / params);
    add_share(report.shares.macs, row.path, static_cast<double>(row.macs) / macs);
  }
  return report;
}

std::uint64_t count_params(const UNetConfig& config) { return analyze(config).total_params; }

std::uint64_t count_macs(const UNetConfig& config) { return analyze(config).total_macs; }

PathBreakdown path_breakdown(const UNetConfig& config) { return analyze(config).shares; }

std::vector<SweepRow> sweep(const std::vector<int>& blocks, const std::vector<std::size_t>& base_channels,
                            const UNetConfig& base) {
  std::vector<SweepRow> rows;
  for (int b : blocks) {
    for (std::size_t c : base_channels) {
      UNetConfig cfg = base;
      cfg.blocks = b;
      cfg.base_channels = c;
      const auto report = analyze(cfg);
      rows.push_back({cfg, report.total_params, report.total_macs});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "config,blocks,base_channels,params,macs\n";
  for (const auto& r : rows) {
    out += fmt::format("b{}c{},{},{},{},{}\n", r.config.blocks, r.config.base_channels, r.config.blocks,
                       r.config.base_channels, r.params, r.macs);
  }
  return out;
}

std::string cost_csv(const CostReport& report) {
  std::string out = "layer,path,params,macs,out_c,out_h,out_w\n";
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.name, to_string(r.path), r.params, r.macs, r.output_shape[1],
                       r.output_shape[2], r.output_shape[3]);
  }
  return out;
}

}  // namespace unetlite::analyzer
