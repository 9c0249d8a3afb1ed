#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eogym/harness.hpp"

namespace eogym::testing {

// Fresh directory under the system temp dir, removed at process exit.
std::filesystem::path temp_dir(const std::string& tag);

// Fixture corpus for the default spec, generated once per process.
const Environment& fixture_env();
const std::filesystem::path& fixture_dir();

// Fraction of k-subsets of n rollouts (c correct) containing a correct one, by enumeration.
// Returned as an unreduced num/den pair.
struct Fraction {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
};
Fraction pass_at_k_by_enumeration(int n, int c, int k);
bool same_value(const Fraction& f, const Rational& r);

// (a - b) / (a + b) evaluated one pixel at a time; NaN for a zero sum.
std::vector<double> scalar_normalized_difference(const RasterPatch& a, const RasterPatch& b);

// Brute-force tool-match relations.
bool brute_subsequence(const std::vector<std::string>& predicted, const std::vector<std::string>& reference);
bool brute_multiset_cover(const std::vector<std::string>& predicted, const std::vector<std::string>& reference);

// Single-band synthetic scene with the given per-role reflectances plus noise.
BandSet random_bandset(std::uint64_t seed, int width, int height);

}  // namespace eogym::testing
