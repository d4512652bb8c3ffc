#pragma once

#include "diffscope/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diffscope {

enum class ToyShape { Circle, Square, Triangle, Cross, Ring };
enum class ToyPalette { Warm, Cool };

inline constexpr int kToyShapes = 5;
inline constexpr int kToyPalettes = 2;

/// Procedural stand-in for a labelled image corpus. Class c draws shape c % 5 in palette c / 5.
struct ToySpec {
    int side = 32;
    int channels = 3;
    int classes = 10;
    /// Centre offset, as a fraction of the side, drawn uniformly from [-jitter, jitter].
    double position_jitter = 0.12;
    /// Shape radius as a fraction of the side.
    double scale_min = 0.22;
    double scale_max = 0.34;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const ToySpec&, const ToySpec&) = default;
};

ToyShape class_shape(int class_id);
ToyPalette class_palette(int class_id);
std::string class_name(int class_id);

/// Label of dataset index i (round robin over classes).
int toy_label(const ToySpec& spec, std::int64_t index);

/// Image i of the dataset, [C, H, W] in [-1, 1]. Depends only on (spec, index).
Tensor<float> toy_image(const ToySpec& spec, std::int64_t index);

struct ToyDataset {
    Tensor<float> images;  // [N, C, H, W]
    std::vector<int> labels;
};

ToyDataset gen_dataset(const ToySpec& spec, std::int64_t count);

/// Batch of images for the given indices, [B, C, H, W], with their labels.
ToyDataset toy_batch(const ToySpec& spec, const std::vector<std::int64_t>& indices);

}  // namespace diffscope
