#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ssc/pipeline.hpp"

namespace ssc {

using ParamVisitor =
    std::function<void(const std::string& name, const Tensor::Shape& shape, std::span<double>)>;

// Visits every parameter array in forward order. LinearMaps yield
// "<block>.weight" [out, in] and "<block>.bias" [out].
void visit_params(ModelParams& params, const ParamVisitor& fn);

/// Blob: rank u32 LE, dims u32 LE each, then row-major f64 LE values.
std::vector<std::uint8_t> encode_param_blob(const Tensor::Shape& shape,
                                            std::span<const double> values);
// Fills `out` after checking the shape; throws FormatError on mismatch.
void decode_param_blob(std::span<const std::uint8_t> bytes, const Tensor::Shape& shape,
                       std::span<double> out);

/// Writes `<dir>/manifest.txt` (one name per line, forward order) and one
/// `<dir>/<name>.bin` blob per array.
void save_params(ModelParams& params, const std::filesystem::path& dir);
// Loads into an already-shaped ModelParams (e.g. from init_model).
void load_params(ModelParams& params, const std::filesystem::path& dir);

}  // namespace ssc
