#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "miscale/dataset.h"

namespace miscale::io {

inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;

/// Reads a 3-D uint8 IDX tensor (count, rows, cols); bytes are scaled by 1/255.
Dataset read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit = std::nullopt);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// Writes raw uint8 images in IDX form. Used to build fixtures.
void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& pixels);

using Embeddings = std::unordered_map<std::string, std::vector<double>>;

/// One record per line: token followed by its vector. All widths must agree.
Embeddings read_embeddings(const std::filesystem::path& path, std::size_t* width = nullptr);
Embeddings parse_embeddings(std::istream& in, std::size_t* width = nullptr);

std::vector<std::string> tokenize(std::istream& in);

/// Sliding windows of seq_len tokens starting every stride tokens; unknown
/// tokens become zero vectors.
Dataset embed_windows(const std::vector<std::string>& tokens, const Embeddings& embeddings,
                      std::size_t embed_dim, std::size_t seq_len, std::size_t stride);

Dataset ingest_embedded_text(const std::filesystem::path& corpus, const std::filesystem::path& embeddings,
                             std::size_t seq_len, std::size_t stride);

/// Raw tensor file: "MISC", u32 N, u32 D, u32 flags, then N*D little-endian f64.
/// Geometry and any extra metadata live in a sidecar descriptor <path>.json.
void write_raw(const std::filesystem::path& path, const Dataset& data, const std::string& extra_json = "{}");
Dataset read_raw(const std::filesystem::path& path);
std::filesystem::path descriptor_path(const std::filesystem::path& raw);

void write_csv(const std::filesystem::path& path, const Dataset& data);

} // namespace miscale::io
