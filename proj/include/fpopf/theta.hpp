// Squared line current and its derivatives over the static state.
//
// For a lossless line between buses i and j,
//
//   F(V_i, V_j, th_i, th_j) = |Y_ij|^2 (V_i^2 + V_j^2 - 2 V_i V_j cos(th_i - th_j))
//
// is the squared magnitude of the current phasor.  A relay trips the line
// when F reaches the trip threshold i_trip^2; the operating limit used by
// the dispatch problem is the smaller i_lim^2.
//
// F depends on at most four state coordinates (the endpoint voltages when
// an endpoint has no generator, the endpoint angles when an endpoint is not
// the slack).  Its Hessian over those local coordinates has the closed
// form Q K Q' with K diagonal of size r:
//
//   r = 3  both endpoints are load buses:    K = diag(1, 1, -1)
//   r = 2  exactly one endpoint is a load:   K = diag(1, V_i V_j c - V_j^2 s^2)
//
// with Q carrying the sqrt(2) |Y_ij| scale (columns given in factor()).
// The low-rank form is what makes large-deviation rate evaluation cheap:
// every dense d x d object in that computation collapses onto an r x r one.
// Lines joining two generator buses have no voltage coordinates, are not in
// the failure set, and only expose value/gradient here (their flow limits
// still apply in the dispatch problem).
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/network.hpp"

namespace fpopf {

// Which physical coordinate a local slot holds, in the role ordering used
// throughout (i is the load endpoint whenever exactly one endpoint is one).
enum class FlowCoord { Vi, Vj, ThI, ThJ };

// Endpoint voltages and angles of one line, role-ordered.
struct LineState {
  double vi = 1.0, vj = 1.0, ti = 0.0, tj = 0.0;
};

struct FlowFactor {
  Eigen::MatrixXd Q;  // p x r, scale included: hessian over P equals Q K Q'
  Eigen::VectorXd K;  // diagonal of K, length r
};

class LineFlow {
 public:
  LineFlow(const Network& net, int line_idx) : net_(&net), line_idx_(line_idx) {
    const Line& l = net.lines[static_cast<std::size_t>(line_idx)];
    int bi = net.bus_index(l.from_bus);
    int bj = net.bus_index(l.to_bus);
    const bool gi = net.is_gen_bus(bi);
    const bool gj = net.is_gen_bus(bj);
    if (gi && !gj) std::swap(bi, bj);  // make i the load endpoint
    bus_i_ = bi;
    bus_j_ = bj;
    y_mag_ = l.susceptance_mag;
    g_ = y_mag_ * y_mag_;
    flow_max_ = l.i_lim * l.i_lim;
    trip_max_ = l.i_trip * l.i_trip;
    rank_ = (!gi && !gj) ? 3 : ((gi && gj) ? 1 : 2);

    const auto& map = net.index_map();
    const auto push = [this](FlowCoord kind, int idx) {
      if (idx >= 0) {
        kinds_.push_back(kind);
        x_index_.push_back(idx);
      }
    };
    if (rank_ == 3) {
      push(FlowCoord::Vi, map.v_index(bus_i_));
      push(FlowCoord::Vj, map.v_index(bus_j_));
      push(FlowCoord::ThI, map.th_index(bus_i_));
      push(FlowCoord::ThJ, map.th_index(bus_j_));
    } else if (rank_ == 2) {
      push(FlowCoord::Vi, map.v_index(bus_i_));
      push(FlowCoord::ThI, map.th_index(bus_i_));
      push(FlowCoord::ThJ, map.th_index(bus_j_));  // dropped when j is the slack
    } else {
      push(FlowCoord::ThI, map.th_index(bus_i_));
      push(FlowCoord::ThJ, map.th_index(bus_j_));
    }
  }

  int line_index() const { return line_idx_; }
  int line_id() const { return net_->lines[static_cast<std::size_t>(line_idx_)].id; }
  int bus_i() const { return bus_i_; }
  int bus_j() const { return bus_j_; }
  double y_mag() const { return y_mag_; }
  double flow_limit_sq() const { return flow_max_; }
  double trip_limit_sq() const { return trip_max_; }
  int rank() const { return rank_; }
  int p() const { return static_cast<int>(x_index_.size()); }
  bool in_failure_set() const {
    return net_->lines[static_cast<std::size_t>(line_idx_)].in_failure_set;
  }
  const std::vector<FlowCoord>& local_kinds() const { return kinds_; }
  const std::vector<int>& local_indices() const { return x_index_; }

  // ---- state extraction -----------------------------------------------

  LineState extract(const EnergyModel::BusState& st) const {
    return LineState{st.V(bus_i_), st.V(bus_j_), st.theta(bus_i_), st.theta(bus_j_)};
  }

  // Line state from the local coordinate vector, with the non-state
  // coordinates (generator-bus voltage, slack angle) filled from y.
  LineState from_local(const Eigen::VectorXd& x_local, const DispatchPoint& y) const {
    LineState s;
    s.vi = fixed_v(bus_i_, y);
    s.vj = fixed_v(bus_j_, y);
    s.ti = y.theta_slack;
    s.tj = y.theta_slack;
    for (int k = 0; k < p(); ++k) {
      switch (kinds_[static_cast<std::size_t>(k)]) {
        case FlowCoord::Vi: s.vi = x_local(k); break;
        case FlowCoord::Vj: s.vj = x_local(k); break;
        case FlowCoord::ThI: s.ti = x_local(k); break;
        case FlowCoord::ThJ: s.tj = x_local(k); break;
      }
    }
    return s;
  }

  Eigen::VectorXd local_from_static(const Eigen::VectorXd& x_static) const {
    Eigen::VectorXd v(p());
    for (int k = 0; k < p(); ++k) v(k) = x_static(x_index_[static_cast<std::size_t>(k)]);
    return v;
  }

  // ---- value and derivatives -------------------------------------------

  double value(const LineState& s) const {
    const double c = std::cos(s.ti - s.tj);
    return g_ * (s.vi * s.vi + s.vj * s.vj - 2.0 * s.vi * s.vj * c);
  }

  // Derivatives over the full role-ordered quadruple (Vi, Vj, ThI, ThJ),
  // used by dense reference computations.
  Eigen::Vector4d grad4(const LineState& s) const {
    const double c = std::cos(s.ti - s.tj);
    const double sn = std::sin(s.ti - s.tj);
    Eigen::Vector4d gr;
    gr(0) = 2.0 * g_ * (s.vi - s.vj * c);
    gr(1) = 2.0 * g_ * (s.vj - s.vi * c);
    gr(2) = 2.0 * g_ * s.vi * s.vj * sn;
    gr(3) = -gr(2);
    return gr;
  }

  Eigen::Matrix4d hess4(const LineState& s) const {
    const double c = std::cos(s.ti - s.tj);
    const double sn = std::sin(s.ti - s.tj);
    Eigen::Matrix4d h;
    const double tg = 2.0 * g_;
    h(0, 0) = tg;
    h(0, 1) = -tg * c;
    h(0, 2) = tg * s.vj * sn;
    h(0, 3) = -tg * s.vj * sn;
    h(1, 1) = tg;
    h(1, 2) = tg * s.vi * sn;
    h(1, 3) = -tg * s.vi * sn;
    h(2, 2) = tg * s.vi * s.vj * c;
    h(2, 3) = -tg * s.vi * s.vj * c;
    h(3, 3) = tg * s.vi * s.vj * c;
    h(1, 0) = h(0, 1);
    h(2, 0) = h(0, 2);
    h(2, 1) = h(1, 2);
    h(3, 0) = h(0, 3);
    h(3, 1) = h(1, 3);
    h(3, 2) = h(2, 3);
    return h;
  }

  // Gradient over the p active local coordinates.
  Eigen::VectorXd grad_local(const LineState& s) const {
    const Eigen::Vector4d g4 = grad4(s);
    Eigen::VectorXd gr(p());
    for (int k = 0; k < p(); ++k) gr(k) = g4(slot(kinds_[static_cast<std::size_t>(k)]));
    return gr;
  }

  // Hessian over the active coordinates by direct entry selection.
  Eigen::MatrixXd hess_local(const LineState& s) const {
    const Eigen::Matrix4d h4 = hess4(s);
    Eigen::MatrixXd h(p(), p());
    for (int a = 0; a < p(); ++a)
      for (int b = 0; b < p(); ++b)
        h(a, b) = h4(slot(kinds_[static_cast<std::size_t>(a)]),
                     slot(kinds_[static_cast<std::size_t>(b)]));
    return h;
  }

  // Closed-form factorization of hess_local: Q K Q' with K diagonal.
  FlowFactor factor(const LineState& s) const {
    if (rank_ == 1)
      throw ValidationError("flow Hessian factorization requested for a line between two generator buses");
    const double c = std::cos(s.ti - s.tj);
    const double sn = std::sin(s.ti - s.tj);
    const double scale = std::sqrt(2.0) * y_mag_;
    FlowFactor f;
    if (rank_ == 3) {
      // columns over (Vi, Vj, ThI, ThJ); no slack drop can occur here
      const double t = std::sqrt(s.vi * s.vi + s.vj * s.vj + s.vi * s.vj * c);
      f.Q.resize(4, 3);
      f.Q.col(0) << 1.0, -c, s.vj * sn, -s.vj * sn;
      f.Q.col(1) << 0.0, sn, s.vi + s.vj * c, -(s.vi + s.vj * c);
      f.Q.col(2) << 0.0, 0.0, t, -t;
      f.K.resize(3);
      f.K << 1.0, 1.0, -1.0;
    } else {
      // columns over (Vi, ThI, ThJ); the ThJ row is dropped when j is the slack
      Eigen::MatrixXd q(3, 2);
      q.col(0) << 1.0, s.vj * sn, -s.vj * sn;
      q.col(1) << 0.0, 1.0, -1.0;
      if (p() == 3) {
        f.Q = q;
      } else {
        f.Q = q.topRows(2);
      }
      f.K.resize(2);
      f.K << 1.0, s.vi * s.vj * c - s.vj * s.vj * sn * sn;
    }
    f.Q *= scale;
    return f;
  }

 private:
  static int slot(FlowCoord k) { return static_cast<int>(k); }

  double fixed_v(int bus_idx, const DispatchPoint& y) const {
    if (net_->is_gen_bus(bus_idx)) return y.v_gen_bus(net_->gen_bus_position(bus_idx));
    return 1.0;  // overwritten by the local vector for load endpoints
  }

  const Network* net_;
  int line_idx_;
  int bus_i_ = 0, bus_j_ = 0;
  double y_mag_ = 0.0, g_ = 0.0;
  double flow_max_ = 0.0, trip_max_ = 0.0;
  int rank_ = 0;
  std::vector<FlowCoord> kinds_;
  std::vector<int> x_index_;
};

}  // namespace fpopf
