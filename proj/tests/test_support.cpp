#include "test_support.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <mutex>

#include "eogym/rng.hpp"

namespace eogym::testing {

namespace {

struct TempRoots {
    std::vector<std::filesystem::path> dirs;
    ~TempRoots() {
        std::error_code ec;
        for (const auto& d : dirs) std::filesystem::remove_all(d, ec);
    }
};

TempRoots& roots() {
    static TempRoots r;
    return r;
}

}  // namespace

std::filesystem::path temp_dir(const std::string& tag) {
    std::string pattern = (std::filesystem::temp_directory_path() / ("eogym-" + tag + "-XXXXXX")).string();
    if (!mkdtemp(pattern.data())) throw Error(ErrorCode::io_error, "mkdtemp failed");
    roots().dirs.emplace_back(pattern);
    return pattern;
}

const std::filesystem::path& fixture_dir() {
    static const std::filesystem::path dir = [] {
        auto d = temp_dir("fixtures");
        generate_fixtures(FixtureSpec{}, d);
        return d;
    }();
    return dir;
}

const Environment& fixture_env() {
    static const Environment env = load_environment(fixture_dir());
    return env;
}

Fraction pass_at_k_by_enumeration(int n, int c, int k) {
    Fraction f{0, 0};
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (std::popcount(mask) != k) continue;
        ++f.den;
        // Rollouts 0..c-1 are the correct ones.
        if ((mask & ((1u << c) - 1)) != 0) ++f.num;
    }
    return f;
}

bool same_value(const Fraction& f, const Rational& r) {
    return static_cast<unsigned __int128>(f.num) * r.den == static_cast<unsigned __int128>(r.num) * f.den;
}

std::vector<double> scalar_normalized_difference(const RasterPatch& a, const RasterPatch& b) {
    std::vector<double> out;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            const double p = a.at(x, y), q = b.at(x, y);
            if (p + q == 0.0) {
                out.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            double v = (p - q) / (p + q);
            if (v > 1.0) v = 1.0;
            if (v < -1.0) v = -1.0;
            out.push_back(v);
        }
    return out;
}

bool brute_subsequence(const std::vector<std::string>& predicted, const std::vector<std::string>& reference) {
    const std::size_t n = predicted.size();
    if (reference.empty()) return true;
    if (n > 20) throw Error(ErrorCode::invalid_argument, "too long for brute force");
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != reference.size()) continue;
        std::size_t j = 0;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i)
            if (mask & (1u << i)) ok = predicted[i] == reference[j++];
        if (ok) return true;
    }
    return false;
}

bool brute_multiset_cover(const std::vector<std::string>& predicted, const std::vector<std::string>& reference) {
    std::vector<bool> used(predicted.size(), false);
    for (const auto& r : reference) {
        bool found = false;
        for (std::size_t i = 0; i < predicted.size() && !found; ++i)
            if (!used[i] && predicted[i] == r) used[i] = found = true;
        if (!found) return false;
    }
    return true;
}

BandSet random_bandset(std::uint64_t seed, int width, int height) {
    Rng rng(seed);
    BandSet s;
    s.platform = Platform::synthetic;
    for (const auto& b : band_roles(Platform::synthetic)) {
        RasterPatch p = RasterPatch::filled(width, height, 1);
        for (auto& v : p.pixels) v = static_cast<float>(rng.uniform());
        // A few exact zeros exercise the undefined-denominator path.
        p.pixels[rng.below(p.pixels.size())] = 0.0f;
        s.bands[b.name] = std::move(p);
    }
    return s;
}

}  // namespace eogym::testing
