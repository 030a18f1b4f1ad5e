#pragma once

// Shared helpers for the test suites: seeded generators, a finite-difference
// gradient checker and scratch directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "svit/array.hpp"
#include "svit/container.hpp"
#include "svit/image.hpp"
#include "svit/ops.hpp"
#include "svit/random.hpp"

namespace svit::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;
inline constexpr int kGradSeeds = 20;

template <class T = double>
std::vector<T> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

template <class T = double>
Array<T> random_param(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Array<T>::parameter(shape, random_values<T>(numel(shape), rng, lo, hi));
}

template <class T = double>
Array<T> random_const(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Array<T>::constant(shape, random_values<T>(numel(shape), rng, lo, hi));
}

inline Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Image img(c, h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-10});
    return std::abs(a - b) / scale;
}

using ScalarFn = std::function<Array<double>(const std::vector<Array<double>>&)>;

// Reduces any output to a scalar with fixed random weights so every output
// element receives a distinct upstream gradient.
inline Array<double> project(const Array<double>& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_const<double>(y.shape(), rng)));
}

// Largest per-element relative error between the analytic gradient of
// project(f(inputs)) and central differences, over every input element.
inline double max_gradient_error(const ScalarFn& f, std::vector<Array<double>> inputs, std::uint64_t seed = 99) {
    for (auto& in : inputs) in.zero_grad();
    backward(project(f(inputs), seed));
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto x = inputs[k].mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + kFdStep;
            const double up = project(f(inputs), seed).item();
            x[i] = saved - kFdStep;
            const double down = project(f(inputs), seed).item();
            x[i] = saved;
            const double numeric = (up - down) / (2 * kFdStep);
            const double a = analytic[k][i];
            // Entries where both sides vanish carry no information.
            if (std::abs(a) < 1e-9 && std::abs(numeric) < 1e-9) continue;
            worst = std::max(worst, relative_error(a, numeric));
        }
    }
    return worst;
}

// Directional-derivative check: for each input a random direction v, compare
// grad . v with the central difference of f along v. Two evaluations per
// input, so it scales to full models.
inline double max_directional_error(const std::function<double()>& eval, const std::function<void()>& run_backward,
                                    std::vector<Array<double>> inputs, std::uint64_t seed) {
    for (auto& in : inputs) in.zero_grad();
    run_backward();
    Rng rng(seed);
    double worst = 0;
    for (auto& in : inputs) {
        auto x = in.mutable_data();
        const std::vector<double> g(in.grad().begin(), in.grad().end());
        const auto v = random_values<double>(x.size(), rng);
        double analytic = 0;
        for (std::size_t i = 0; i < x.size(); ++i) analytic += g[i] * v[i];
        const std::vector<double> saved(x.begin(), x.end());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = saved[i] + kFdStep * v[i];
        const double up = eval();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = saved[i] - kFdStep * v[i];
        const double down = eval();
        std::copy(saved.begin(), saved.end(), x.begin());
        const double numeric = (up - down) / (2 * kFdStep);
        if (std::abs(analytic) < 1e-9 && std::abs(numeric) < 1e-9) continue;
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("svit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
    return read_file_bytes(a) == read_file_bytes(b);
}

}  // namespace svit::testing
