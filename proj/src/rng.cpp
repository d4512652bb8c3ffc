#include "diffscope/rng.hpp"

namespace diffscope {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return splitmix(splitmix(splitmix(seed) ^ stream) ^ counter);
}

void fill_normal(std::span<float> out, std::uint64_t seed, NoiseStream stream, std::uint64_t counter) {
    std::mt19937_64 eng(mix_key(seed, static_cast<std::uint64_t>(stream), counter));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : out) v = static_cast<float>(normal(eng));
}

}  // namespace diffscope
