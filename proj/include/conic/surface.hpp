#pragma once

// Discretized k-punctured flat tori with exactly conical ends.
//
// The surface is covered by one doubly periodic Cartesian chart on [0,1)^2
// (small disks around each puncture removed) and one cylinder chart per end in
// coordinates (rho, theta), rho = -log|z - p|. Charts overlap on an annulus and
// exchange data by bilinear interpolation (Schwarz-style synchronization).
//
// Every field lives in one flat vector indexed by global node id; nodes of a
// chart are contiguous.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

using Field = std::vector<double>;
using NodeId = std::size_t;

/// Raised when inputs violate a documented precondition.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

enum class NodeTag : std::uint8_t { interior, overlap, truncation };
enum class ChartKind : std::uint8_t { torus_core, cylinder_end };

struct ConeEnd {
  double angle_alpha = 0.5;       // cone angle is 2*pi*alpha
  double order_tau = 1.0;         // decay order of the optional perturbation
  double perturbation_amp = 0.0;  // A in A*exp(-alpha*tau*rho)*cos(theta)
  double rho_min = 0.0;
  double rho_max = 0.0;
  Point2 puncture;
};

/// Input to build_model.
struct ModelDescription {
  int punctures = 1;
  std::vector<double> alphas{0.5};
  std::vector<Point2> positions;  // empty: default layout
  int core_resolution = 96;       // nodes per direction on [0,1)^2
  int theta_resolution = 0;       // 0: same as core_resolution
  double rho_max = 0.0;           // 0: 12/alpha per end
  double perturbation_amp = 0.0;
  double perturbation_tau = 1.0;
  double r_in = 0.1;
  double r_out = 0.2;
  double r_cut = 0.05;
};

/// Bilinear interpolation weights of an overlap node in its partner chart.
struct InterpStencil {
  std::array<NodeId, 4> source{};
  std::array<double, 4> weight{};
  Point2 partner_coord;  // the node's position in partner chart coordinates
};

struct ChartGrid {
  ChartKind kind = ChartKind::torus_core;
  int end_index = -1;                 // -1 for the core chart
  std::array<int, 2> resolution{};    // (nx, ny) or (n_rho, n_theta)
  std::array<double, 2> spacing{};    // (h, h) or (d_rho, d_theta)
  std::array<double, 2> origin{};     // coordinate of grid index (0,0)
  std::array<bool, 2> periodic{};
  NodeId first = 0;                   // global id of the first node
  NodeId count = 0;
  std::vector<std::int64_t> grid_to_node;  // -1 for removed (hole) cells

  [[nodiscard]] std::int64_t at(int i, int j) const;
  [[nodiscard]] Point2 coordinate(int i, int j) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1]};
  }
};

/// Per-node record; coordinates are in the owning chart.
struct NodeInfo {
  std::uint32_t chart = 0;
  int i = 0;
  int j = 0;
  Point2 coord;
  NodeTag tag = NodeTag::interior;
  std::int32_t interp = -1;  // index into SurfaceModel::interp for overlap nodes
};

struct StencilEntry {
  NodeId node = 0;
  double coeff = 0.0;
};

/// Flat five-point stencil of a non-overlap node; a missing neighbor across a
/// truncation rim is replaced by linear extrapolation, so that direction
/// contributes nothing.
struct FlatStencil {
  std::array<StencilEntry, 5> entries{};
  int size = 0;
};

/// Immutable discretization of (M, g0).
class SurfaceModel {
 public:
  int euler_char = 0;
  std::vector<ConeEnd> ends;
  std::vector<ChartGrid> charts;
  std::vector<NodeInfo> nodes;
  std::vector<InterpStencil> interp;

  Field background_log_factor;  // chart conformal log factor v (g0 = e^{2v}|dchart|^2)
  Field background_curvature;   // R0
  Field area_weights;           // dA0 including the chart partition of unity
  Field laplacian_scale;        // e^{-2v}

  double r_in = 0.1;
  double r_out = 0.2;
  double r_cut = 0.05;
  double gauss_bonnet_defect = 0.0;  // sum R0 dA0 - 4 pi (chi - sum alpha)
  bool exact_fixture = false;        // single-chart fixture (chi >= 0 allowed)

  [[nodiscard]] std::size_t size() const { return nodes.size(); }
  [[nodiscard]] FlatStencil flat_stencil(NodeId n) const;
  [[nodiscard]] const ChartGrid& chart_of(NodeId n) const { return charts[nodes[n].chart]; }
  [[nodiscard]] bool is_cylinder(NodeId n) const {
    return chart_of(n).kind == ChartKind::cylinder_end;
  }
  /// Analytic chart conformal log factor at chart coordinate c.
  [[nodiscard]] double log_factor_at(std::uint32_t chart, Point2 c) const;
  /// Mesh spacing of the core chart (or the cylinder rho-spacing for fixtures).
  [[nodiscard]] double core_spacing() const;
  /// Core region: core chart plus cylinder nodes with rho <= rho_max / 2.
  [[nodiscard]] bool in_core(NodeId n) const;
  /// Compact set K: core chart plus cylinder nodes with rho <= rho_cap.
  [[nodiscard]] bool in_compact(NodeId n, double rho_cap) const;
  /// Nearest node to a point of the torus, searching the core chart.
  [[nodiscard]] NodeId nearest_core_node(Point2 z) const;
  /// Returns a copy with R0 replaced (manufactured-solution tests).
  [[nodiscard]] SurfaceModel with_background_curvature(Field r0) const;
};

/// Builds a k-punctured torus (chi = -k) with exact cone ends.
SurfaceModel build_model(const ModelDescription& desc);

/// Single cylinder chart with v = alpha*rho and both rims truncated; R0 == 0.
SurfaceModel build_exact_cone_fixture(double alpha, int n_theta, double rho_min,
                                      double rho_max);

/// Flat unpunctured torus, one periodic chart, v0 == 0.
SurfaceModel build_flat_torus_fixture(int resolution);

/// Overlap nodes receive bilinear interpolation of partner-chart values.
void chart_sync(const SurfaceModel& model, std::span<double> field);
/// Per-chart form; throws if any chart's block is missing or mis-sized.
std::vector<Field> chart_sync(const SurfaceModel& model, std::vector<Field> per_chart);
/// Largest |f - interp(f)| over overlap nodes, relative to 1 + |f|.
double sync_mismatch(const SurfaceModel& model, std::span<const double> field);

Field laplacian_apply(const SurfaceModel& model, std::span<const double> field);
Field scalar_curvature(const SurfaceModel& model, std::span<const double> u);
double total_curvature(const SurfaceModel& model, std::span<const double> u);
/// Weighted area of u*g0.
double area(const SurfaceModel& model, std::span<const double> u);

/// Graph shortest path in u*g0 between two nodes.
double geodesic_distance(const SurfaceModel& model, std::span<const double> u, NodeId a,
                         NodeId b);
/// Single-source distances to every node.
std::vector<double> geodesic_distances_from(const SurfaceModel& model,
                                            std::span<const double> u, NodeId source);

namespace detail {
/// Laplacian without the overlap synchronization check.
Field apply_laplacian(const SurfaceModel& model, std::span<const double> field);
}  // namespace detail

/// Distance on the unit flat torus between two points (minimum over deck translates).
double torus_distance(Point2 a, Point2 b);

}  // namespace conic
