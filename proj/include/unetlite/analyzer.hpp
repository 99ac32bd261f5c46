#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unetlite/model.hpp"

namespace unetlite::analyzer {

// One MAC is one multiply-accumulate pair; bias adds, pooling, upsampling and
// activations are free. Transposed convolutions are counted output-centric,
// i.e. as a k x k correlation evaluated at every output pixel.

struct CostRow {
  std::string name;
  PathKind path = PathKind::encoder;
  LayerKind kind = LayerKind::conv;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  Tensor::Shape output_shape;  // single image, N = 1
};

struct PathShares {
  double encoder = 0.0;
  double middle = 0.0;
  double decoder = 0.0;
  double final = 0.0;

  double encoder_and_middle() const noexcept { return encoder + middle; }
  double decoder_and_final() const noexcept { return decoder + final; }
  double sum() const noexcept { return encoder + middle + decoder + final; }
};

struct PathBreakdown {
  PathShares params;
  PathShares macs;
};

struct CostReport {
  UNetConfig config;
  std::vector<CostRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  PathBreakdown shares;
};

CostReport analyze(const UNetConfig& config);

std::uint64_t count_params(const UNetConfig& config);
std::uint64_t count_macs(const UNetConfig& config);
PathBreakdown path_breakdown(const UNetConfig& config);

struct SweepRow {
  UNetConfig config;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// Cartesian product of block counts and base widths, all other fields taken
/// from `base`. Defaults cover blocks 1..4 and widths 64/32 .. 64/2.
std::vector<SweepRow> sweep(const std::vector<int>& blocks = {1, 2, 3, 4},
                            const std::vector<std::size_t>& base_channels = {2, 4, 8, 16, 32},
                            const UNetConfig& base = {});

/// Header `config,blocks,base_channels,params,macs`.
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Header `layer,path,params,macs,out_c,out_h,out_w`.
std::string cost_csv(const CostReport& report);

}  // namespace unetlite::analyzer
