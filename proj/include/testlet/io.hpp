#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "testlet/fit_result.hpp"
#include "testlet/model.hpp"

namespace testlet::io {

using Json = nlohmann::ordered_json;

// Headerless CSV of 0/1, one row per person. Throws IoError on unreadable
// files and InvalidArgument on malformed content (with line number).
ResponseMatrix read_responses(const std::filesystem::path& path);
void write_responses(const std::filesystem::path& path, const ResponseMatrix& data);

// {"n_items": J, "testlets": [[item indices]...]}. A plain array of per-item
// testlet indices (-1 = independent) is also accepted on input.
Json design_to_json(const TestletDesign& design);
TestletDesign design_from_json(const Json& j);

// Generating values written next to simulated responses.
struct Truth {
    std::vector<ItemIrtParams> items;
    std::vector<double> sigma2;
    TestletDesign design;
};

Json truth_to_json(const Truth& truth);
Truth truth_from_json(const Json& j);

// Non-finite numbers are written as null and read back as NaN.
Json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const Json& j);

Json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline; creates parent directories.
void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace testlet::io
