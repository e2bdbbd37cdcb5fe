#pragma once

#include <cstdint>
#include <string>

#include "dott/decomposition.hpp"
#include "dott/mode_tree.hpp"

namespace dott {

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header
// (tree, grid rules, shapes, ranks), then every array as little-endian f64 in
// depth-first order. Grid nodes and weights travel in the payload so the round
// trip is bit-exact.
inline constexpr std::uint32_t serial_format_version = 1;

std::string to_bytes(const HierarchicalDecomposition& h);
HierarchicalDecomposition decomposition_from_bytes(const std::string& bytes);

// DO-TT checkpoint with its time stamp.
std::string to_bytes(const DoTtState& s);
DoTtState checkpoint_from_bytes(const std::string& bytes);

void save(const HierarchicalDecomposition& h, const std::string& path);
void save(const DoTtState& s, const std::string& path);
HierarchicalDecomposition load_decomposition(const std::string& path);
DoTtState load_checkpoint(const std::string& path);

} // namespace dott
