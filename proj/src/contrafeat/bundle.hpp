#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace contrafeat {

// On-disk array bundle: a directory with manifest.json plus one raw
// little-endian f32 blob per array. Used for PCA bases, checkpoints and
// paired datasets. Save/load round-trips bitwise.
struct Bundle {
    std::map<std::string, Tensor> arrays;
    nlohmann::json config;  // echoed run config (may be null)

    bool has(const std::string& name) const { return arrays.count(name) != 0; }
    const Tensor& get(const std::string& name) const;

    void put_scalar(const std::string& name, float x);
    float get_scalar(const std::string& name) const;

    // 64-bit words are stored exactly as four 16-bit chunks per word, each of
    // which is representable in f32.
    void put_u64s(const std::string& name, const std::vector<std::uint64_t>& words);
    std::vector<std::uint64_t> get_u64s(const std::string& name) const;
};

void save_bundle(const std::filesystem::path& dir, const Bundle& b);
Bundle load_bundle(const std::filesystem::path& dir);

}  // namespace contrafeat
