#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace crossmap {

using Json = nlohmann::json;
// Ordered JSON is used for every file we emit so that output bytes are a pure
// function of content.
using OrderedJson = nlohmann::ordered_json;

// --- angles ---------------------------------------------------------------

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Wraps an angle into [0, 2*pi).
double wrap_angle(double a);

// Signed angular difference a - b wrapped into (-pi, pi].
double angle_diff(double a, double b);

// --- bytes ----------------------------------------------------------------

std::string base64_encode(std::span<const uint8_t> bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

// Little-endian float64 payloads for world/feature files.
std::string doubles_to_base64(std::span<const double> values);
std::vector<double> base64_to_doubles(std::string_view text);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::string& path);

// --- files ----------------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace crossmap
