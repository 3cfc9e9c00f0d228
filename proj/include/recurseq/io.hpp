#pragma once

#include <filesystem>
#include <string_view>

namespace recurseq {

/// Writes to a sibling temp file, then renames over `path`. Throws DataError
/// on I/O failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace recurseq
