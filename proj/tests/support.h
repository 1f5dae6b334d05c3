#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "miscale/error.h"

namespace testing {

inline std::filesystem::path scratch(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / "miscale_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

// kind of the miscale::Error thrown by f, or nullopt if it returns normally
template <class F>
std::optional<miscale::ErrorKind> error_kind(F&& f)
{
    try {
        f();
    } catch (const miscale::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

} // namespace testing

#define CHECK_ERROR_KIND(expr, k) CHECK(::testing::error_kind([&] { (void)(expr); }) == std::optional(k))
