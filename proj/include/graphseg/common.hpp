#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace graphseg {

// Configuration problems: bad files, out-of-range values, unknown backend
// names. The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failures inside the pipeline. CLI exit code 3.
class PipelineError : public std::runtime_error {
public:
    explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidInputError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class EmptyDetectionError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class UnknownPromptError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class DimensionMismatchError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class DegenerateGraphError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class LabelRangeError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class CheckpointIncompatibleError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class EmptyPromptError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class SegmentationError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class TrainingError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

class MetricError : public PipelineError {
public:
    using PipelineError::PipelineError;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
    return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Seeded RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled because std::uniform_real_distribution
// and std::normal_distribution are implementation-defined, which would break
// the bit-identical-across-processes contract on a different stdlib.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection keeps the distribution exact.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; caches the second variate.
    double normal(double mean = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sigma * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mean + sigma * mag * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stateless hash-based noise, uniform in [-amplitude, +amplitude]. Used by
// mock backends so their outputs are pure functions of (inputs, seed).
inline double hash_noise(std::uint64_t key, double amplitude) {
    const std::uint64_t h = splitmix64(key);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0,1)
    return (2.0 * u - 1.0) * amplitude;
}

class StopWatch {
public:
    StopWatch() : start_(clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(clock::now() - start_).count();
    }
    void reset() { start_ = clock::now(); }

private:
    using clock = std::chrono::steady_clock;
    clock::time_point start_;
};

}  // namespace graphseg
