#ifndef FORGE_TRAJECTORY_HPP
#define FORGE_TRAJECTORY_HPP

#include <string>
#include <vector>

namespace forge {

// A time-stamped state sequence. Integrators fill times/states; the dataset
// layer adds system metadata, noise, and the clean copy.
struct Trajectory {
    std::string system;
    std::vector<double> times;                   // strictly increasing
    std::vector<std::vector<double>> states;     // n_times x d
    std::vector<std::vector<double>> clean_states;  // empty unless noise applied
    double sigma_rel = 0.0;

    std::size_t size() const { return times.size(); }
    std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }
};

}  // namespace forge

#endif
