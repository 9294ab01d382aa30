// Network model: buses, lossless lines, generators, the susceptance matrix,
// and the state partition used by every downstream module.
//
// Conventions (all quantities in per-unit on the system base):
//   - lines are lossless: each carries only a series susceptance magnitude
//     |Y_ij| = 1/x_ij; charging and bus shunts are folded into Bus::b_shunt;
//   - the susceptance matrix is B_ij = sum of 1/x over parallel lines (i,j),
//     B_ii = -sum_j 1/x_ij + b_shunt_i, the convention under which the
//     printed power-balance equations have zero residual at a solved state;
//   - a bus is a generator bus iff at least one in-service generator is
//     attached; exactly one bus is the slack and it must be a generator bus;
//   - a line belongs to the failure set L' iff at least one endpoint is a
//     non-generator bus.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "fpopf/common.hpp"

namespace fpopf {

struct Bus {
  int id = 0;
  double v_min = 0.9;
  double v_max = 1.1;
  double p_d = 0.0;      // active demand
  double q_d = 0.0;      // reactive demand
  double b_shunt = 0.0;  // shunt susceptance (capacitive positive)
  bool is_slack = false;
};

struct Line {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double susceptance_mag = 0.0;  // |Y_ij| = 1/x
  double i_lim = 0.0;            // operating current limit
  double i_trip = 0.0;           // relay trip current, >= i_lim
  bool in_failure_set = false;   // derived
};

struct Generator {
  int id = 0;
  int bus = 0;
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  double cost_c2 = 0.0, cost_c1 = 0.0, cost_c0 = 0.0;  // cost on p.u. power
  double mass = 0.0531;                                // rotor inertia
};

// Operating point carried by some input files (used as the default dispatch
// for rate reports and cascade batches when no solved dispatch is supplied).
struct EmbeddedDispatch {
  bool present = false;
  std::vector<double> gen_p;  // per generator, same order as Network::generators
  std::vector<double> gen_v;  // voltage setpoint per generator
};

// Index layout of the state vector x for a given network:
//   [ V at non-generator buses | theta at non-slack buses | omega at
//     non-slack generators ], each block ordered by ascending id.
// Static computations (power flow, rates, dispatch optimization) use only
// the leading d_static = n_v + n_th entries; the omega block exists so that
// dynamic simulation indexes the same map.
struct StateIndexMap {
  int d = 0;         // full dimension including omega block
  int d_static = 0;  // V and theta blocks only
  int n_v = 0, n_th = 0, n_om = 0;

  std::vector<int> v_bus;    // V-block position -> bus array index
  std::vector<int> th_bus;   // theta-block position -> bus array index
  std::vector<int> om_gen;   // omega-block position -> generator array index
  std::vector<int> bus_v;    // bus array index -> V-block position or -1
  std::vector<int> bus_th;   // bus array index -> theta-block position or -1
  std::vector<int> gen_om;   // generator array index -> omega pos or -1

  int v_index(int bus_idx) const { return bus_v[static_cast<std::size_t>(bus_idx)]; }
  int th_index(int bus_idx) const {
    const int t = bus_th[static_cast<std::size_t>(bus_idx)];
    return t < 0 ? -1 : n_v + t;
  }
  int om_index(int gen_idx) const {
    const int t = gen_om[static_cast<std::size_t>(gen_idx)];
    return t < 0 ? -1 : d_static + t;
  }
};

class Network {
 public:
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  EmbeddedDispatch embedded_dispatch;

  // ---- derived data (filled by finalize()) ----

  const Eigen::MatrixXd& susceptance() const { return B_; }
  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_line() const { return static_cast<int>(lines.size()); }
  int n_gen() const { return static_cast<int>(generators.size()); }

  int bus_index(int bus_id) const {
    auto it = bus_index_.find(bus_id);
    if (it == bus_index_.end())
      throw ValidationError("unknown bus id " + std::to_string(bus_id));
    return it->second;
  }
  int slack_index() const { return slack_; }
  bool is_gen_bus(int bus_idx) const { return gen_bus_[static_cast<std::size_t>(bus_idx)]; }
  const std::vector<int>& gens_at_bus(int bus_idx) const {
    return bus_gens_[static_cast<std::size_t>(bus_idx)];
  }
  // Generator buses in ascending id order (the voltage-setpoint order).
  const std::vector<int>& gen_bus_list() const { return gen_bus_list_; }
  int gen_bus_position(int bus_idx) const {
    return gen_bus_pos_[static_cast<std::size_t>(bus_idx)];
  }
  const std::vector<int>& neighbors(int bus_idx) const {
    return adjacency_[static_cast<std::size_t>(bus_idx)];
  }
  const std::vector<int>& lines_at_bus(int bus_idx) const {
    return bus_lines_[static_cast<std::size_t>(bus_idx)];
  }
  const StateIndexMap& index_map() const { return map_; }

  // Validates the component data and computes all derived structure.
  // `require_connected` is relaxed for intermediate topologies produced
  // while a cascade simulation is deciding which islands survive.
  void finalize(bool require_connected = true) {
    validate_components();
    build_lookups();
    derive_failure_set();
    build_susceptance();
    build_index_map();
    if (require_connected) check_connected();
  }

  // Copy of this network with the given line/bus ids removed (generators on
  // removed buses are removed too).  Derived data is rebuilt without the
  // connectivity requirement.
  Network reduced(const std::set<int>& removed_line_ids,
                  const std::set<int>& removed_bus_ids) const {
    Network out;
    out.base_mva = base_mva;
    for (const Bus& b : buses)
      if (!removed_bus_ids.count(b.id)) out.buses.push_back(b);
    for (const Line& l : lines)
      if (!removed_line_ids.count(l.id) && !removed_bus_ids.count(l.from_bus) &&
          !removed_bus_ids.count(l.to_bus))
        out.lines.push_back(l);
    for (const Generator& g : generators)
      if (!removed_bus_ids.count(g.bus)) out.generators.push_back(g);
    out.finalize(/*require_connected=*/false);
    return out;
  }

  // Bus ids NOT reachable from the slack through in-service lines.
  std::vector<int> unreachable_from_slack() const {
    std::vector<char> seen(buses.size(), 0);
    std::queue<int> q;
    q.push(slack_);
    seen[static_cast<std::size_t>(slack_)] = 1;
    while (!q.empty()) {
      const int b = q.front();
      q.pop();
      for (int nb : adjacency_[static_cast<std::size_t>(b)]) {
        if (!seen[static_cast<std::size_t>(nb)]) {
          seen[static_cast<std::size_t>(nb)] = 1;
          q.push(nb);
        }
      }
    }
    std::vector<int> missing;
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (!seen[i]) missing.push_back(buses[i].id);
    return missing;
  }

 private:
  void validate_components() {
    if (buses.empty()) throw ValidationError("network has no buses");
    std::set<int> bus_ids, line_ids, gen_ids;
    int slack_count = 0;
    for (const Bus& b : buses) {
      if (b.id <= 0) throw ValidationError("bus ids must be positive");
      if (!bus_ids.insert(b.id).second)
        throw ValidationError("duplicate bus id " + std::to_string(b.id));
      if (!(b.v_min > 0.0) || !(b.v_max > b.v_min))
        throw ValidationError("bus " + std::to_string(b.id) +
                              ": need 0 < v_min < v_max");
      if (b.is_slack) ++slack_count;
    }
    if (slack_count != 1)
      throw ValidationError("exactly one slack bus required, found " +
                            std::to_string(slack_count));
    for (const Line& l : lines) {
      if (l.id <= 0) throw ValidationError("line ids must be positive");
      if (!line_ids.insert(l.id).second)
        throw ValidationError("duplicate line id " + std::to_string(l.id));
      if (!bus_ids.count(l.from_bus) || !bus_ids.count(l.to_bus))
        throw ValidationError("line " + std::to_string(l.id) +
                              " references an unknown bus");
      if (l.from_bus == l.to_bus)
        throw ValidationError("line " + std::to_string(l.id) +
                              " connects a bus to itself");
      if (!(l.susceptance_mag > 0.0))
        throw ValidationError("line " + std::to_string(l.id) +
                              ": series reactance must be positive");
      if (!(l.i_lim > 0.0) || l.i_trip < l.i_lim)
        throw ValidationError("line " + std::to_string(l.id) +
                              ": need i_trip >= i_lim > 0");
    }
    for (const Generator& g : generators) {
      if (g.id <= 0) throw ValidationError("generator ids must be positive");
      if (!gen_ids.insert(g.id).second)
        throw ValidationError("duplicate generator id " + std::to_string(g.id));
      if (!bus_ids.count(g.bus))
        throw ValidationError("generator " + std::to_string(g.id) +
                              " references an unknown bus");
      if (g.p_min > g.p_max || g.q_min > g.q_max)
        throw ValidationError("generator " + std::to_string(g.id) +
                              ": empty capability box");
      if (!(g.mass > 0.0))
        throw ValidationError("generator " + std::to_string(g.id) +
                              ": mass must be positive");
    }
  }

  void build_lookups() {
    std::sort(buses.begin(), buses.end(),
              [](const Bus& a, const Bus& b) { return a.id < b.id; });
    std::sort(lines.begin(), lines.end(),
              [](const Line& a, const Line& b) { return a.id < b.id; });
    std::sort(generators.begin(), generators.end(),
              [](const Generator& a, const Generator& b) { return a.id < b.id; });
    bus_index_.clear();
    for (std::size_t i = 0; i < buses.size(); ++i)
      bus_index_[buses[i].id] = static_cast<int>(i);

    const std::size_t nb = buses.size();
    gen_bus_.assign(nb, false);
    bus_gens_.assign(nb, {});
    for (std::size_t g = 0; g < generators.size(); ++g) {
      const int bi = bus_index(generators[g].bus);
      gen_bus_[static_cast<std::size_t>(bi)] = true;
      bus_gens_[static_cast<std::size_t>(bi)].push_back(static_cast<int>(g));
    }
    gen_bus_list_.clear();
    gen_bus_pos_.assign(nb, -1);
    for (std::size_t i = 0; i < nb; ++i) {
      if (gen_bus_[i]) {
        gen_bus_pos_[i] = static_cast<int>(gen_bus_list_.size());
        gen_bus_list_.push_back(static_cast<int>(i));
      }
    }

    slack_ = -1;
    for (std::size_t i = 0; i < nb; ++i) {
      if (buses[i].is_slack) slack_ = static_cast<int>(i);
    }
    if (!gen_bus_[static_cast<std::size_t>(slack_)])
      throw ValidationError("slack bus " + std::to_string(buses[static_cast<std::size_t>(slack_)].id) +
                            " has no generator");

    adjacency_.assign(nb, {});
    bus_lines_.assign(nb, {});
    for (std::size_t l = 0; l < lines.size(); ++l) {
      const int fi = bus_index(lines[l].from_bus);
      const int ti = bus_index(lines[l].to_bus);
      adjacency_[static_cast<std::size_t>(fi)].push_back(ti);
      adjacency_[static_cast<std::size_t>(ti)].push_back(fi);
      bus_lines_[static_cast<std::size_t>(fi)].push_back(static_cast<int>(l));
      bus_lines_[static_cast<std::size_t>(ti)].push_back(static_cast<int>(l));
    }
    for (auto& adj : adjacency_) {
      std::sort(adj.begin(), adj.end());
      adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }
  }

  void derive_failure_set() {
    for (Line& l : lines) {
      const bool from_gen = gen_bus_[static_cast<std::size_t>(bus_index(l.from_bus))];
      const bool to_gen = gen_bus_[static_cast<std::size_t>(bus_index(l.to_bus))];
      l.in_failure_set = !(from_gen && to_gen);
    }
  }

  void build_susceptance() {
    const int nb = n_bus();
    B_ = Eigen::MatrixXd::Zero(nb, nb);
    for (const Line& l : lines) {
      const int i = bus_index(l.from_bus);
      const int j = bus_index(l.to_bus);
      B_(i, j) += l.susceptance_mag;
      B_(j, i) += l.susceptance_mag;
      B_(i, i) -= l.susceptance_mag;
      B_(j, j) -= l.susceptance_mag;
    }
    for (int i = 0; i < nb; ++i) B_(i, i) += buses[static_cast<std::size_t>(i)].b_shunt;
  }

  void build_index_map() {
    map_ = StateIndexMap{};
    const std::size_t nb = buses.size();
    map_.bus_v.assign(nb, -1);
    map_.bus_th.assign(nb, -1);
    map_.gen_om.assign(generators.size(), -1);
    for (std::size_t i = 0; i < nb; ++i) {
      if (!gen_bus_[i]) {
        map_.bus_v[i] = static_cast<int>(map_.v_bus.size());
        map_.v_bus.push_back(static_cast<int>(i));
      }
    }
    for (std::size_t i = 0; i < nb; ++i) {
      if (static_cast<int>(i) != slack_) {
        map_.bus_th[i] = static_cast<int>(map_.th_bus.size());
        map_.th_bus.push_back(static_cast<int>(i));
      }
    }
    for (std::size_t g = 0; g < generators.size(); ++g) {
      if (bus_index(generators[g].bus) != slack_) {
        map_.gen_om[g] = static_cast<int>(map_.om_gen.size());
        map_.om_gen.push_back(static_cast<int>(g));
      }
    }
    map_.n_v = static_cast<int>(map_.v_bus.size());
    map_.n_th = static_cast<int>(map_.th_bus.size());
    map_.n_om = static_cast<int>(map_.om_gen.size());
    map_.d_static = map_.n_v + map_.n_th;
    map_.d = map_.d_static + map_.n_om;
  }

  void check_connected() const {
    const std::vector<int> missing = unreachable_from_slack();
    if (!missing.empty()) {
      std::string ids;
      for (std::size_t i = 0; i < missing.size() && i < 8; ++i)
        ids += (i ? "," : "") + std::to_string(missing[i]);
      if (missing.size() > 8) ids += ",...";
      throw ValidationError("buses not connected to the slack: " + ids);
    }
  }

  Eigen::MatrixXd B_;
  std::map<int, int> bus_index_;
  std::vector<char> gen_bus_;
  std::vector<std::vector<int>> bus_gens_;
  std::vector<int> gen_bus_list_;
  std::vector<int> gen_bus_pos_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<std::vector<int>> bus_lines_;
  StateIndexMap map_;
  int slack_ = -1;
};

}  // namespace fpopf
