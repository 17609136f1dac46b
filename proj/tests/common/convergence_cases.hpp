#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "kifsod/efficiency.hpp"

namespace kifsod::testing {

// Hand-traced convergence curves. `fires_at` is the last curve iteration kept in the report
// (the point where the rule fired, or the final point when the budget ran out).
struct ConvergenceCase {
  std::string name;
  SpeedProtocol protocol;
  std::vector<SpeedPoint> curve;
  int convergence_iteration;
  bool budget_exhausted;
  int fires_at;
};

inline std::ostream& operator<<(std::ostream& os, const ConvergenceCase& c) { return os << c.name; }

inline SpeedProtocol protocol(int interval, int patience) { return {interval, patience, 3000}; }

inline std::vector<SpeedPoint> flat(int from, int to, int step, double nap) {
  std::vector<SpeedPoint> c;
  for (int it = from; it <= to; it += step) c.push_back({it, nap});
  return c;
}

inline std::vector<SpeedPoint> join(std::initializer_list<std::vector<SpeedPoint>> parts) {
  std::vector<SpeedPoint> c;
  for (const auto& p : parts) c.insert(c.end(), p.begin(), p.end());
  return c;
}

inline std::vector<ConvergenceCase> convergence_cases() {
  // clang-format off
  return {
      {"plateau_with_dip", protocol(200, 600), {{200, .05}, {400, .10}, {600, .10}, {800, .09}, {1000, .10}}, 400,
       false, 1000},
      {"strictly_increasing", protocol(50, 300), {{0, .1}, {50, .2}, {100, .3}}, 100, true, 100},
      {"constant", protocol(200, 600), {{200, .3}, {400, .3}, {600, .3}, {800, .3}}, 200, false, 800},
      {"single_point", protocol(50, 300), {{0, .5}}, 0, true, 0},
      {"peak_then_decay", protocol(50, 300), join({{{0, .1}, {50, .5}}, flat(100, 400, 50, .4)}), 50, false, 350},
      {"late_improvement", protocol(50, 300),
       join({{{0, .5}}, flat(50, 250, 50, .4), {{300, .6}}, flat(350, 700, 50, .5)}), 300, false, 600},
      {"improvement_on_the_boundary", protocol(50, 300),
       join({{{0, .5}}, flat(50, 250, 50, .4), {{300, .51}}, flat(350, 650, 50, .3)}), 300, false, 600},
      {"tie_on_the_boundary", protocol(50, 300), flat(0, 300, 50, .5), 0, false, 300},
      {"all_zero", protocol(50, 300), flat(0, 500, 50, 0.0), 0, false, 300},
      {"rise_then_plateau", protocol(50, 300), join({{{0, .1}, {50, .2}}, flat(100, 450, 50, .3)}), 100, false, 400},
      {"noisy_plateau", protocol(50, 300),
       {{0, .2}, {50, .4}, {100, .35}, {150, .45}, {200, .44}, {250, .45}, {300, .43}, {350, .45}, {400, .44},
        {450, .45}, {500, .46}},
       150, false, 450},
      {"tiny_improvement_counts", protocol(50, 300), join({{{0, .3}, {50, .3000001}}, flat(100, 400, 50, .3)}), 50,
       false, 350},
      {"short_dip_exhausts_budget", protocol(50, 300), {{0, .1}, {50, .2}, {100, .15}, {150, .15}}, 50, true, 150},
      {"patience_equals_interval", protocol(50, 50), {{0, .1}, {50, .05}, {100, .2}}, 0, false, 50},
      {"patience_equals_interval_rise", protocol(50, 50), {{0, .1}, {50, .2}, {100, .3}, {150, .25}, {200, .4}}, 100,
       false, 150},
      {"collapse_to_zero", protocol(100, 200), {{0, 0.0}, {100, .8}, {200, 0.0}, {300, 0.0}, {400, .9}}, 100, false,
       300},
      {"tie_does_not_reset_window", protocol(50, 100), {{0, .1}, {50, .1}, {100, .2}, {150, .2}, {200, .2}}, 100, false,
       200},
      {"offset_start", protocol(200, 400), {{200, .1}, {400, .2}, {600, .1}, {800, .1}, {1000, .3}}, 400, false, 800},
      {"plateau_shorter_than_patience", protocol(50, 300), join({{{0, 0.0}}, flat(50, 300, 50, .6)}), 50, true, 300},
      {"monotone_decrease", protocol(50, 150), {{0, .9}, {50, .8}, {100, .7}, {150, .6}, {200, .5}}, 0, false, 150},
      {"second_plateau", protocol(50, 300),
       join({flat(0, 250, 50, .1), {{300, .2}}, flat(350, 700, 50, .2)}), 300, false, 600},
      {"gap_in_evaluations", protocol(50, 300), {{0, .4}, {100, .3}, {350, .35}, {400, .6}}, 0, false, 350},
      {"best_at_last_point", protocol(100, 300), {{0, .1}, {100, .1}, {200, .1}, {300, .2}}, 300, true, 300},
  };
  // clang-format on
}

}  // namespace kifsod::testing
