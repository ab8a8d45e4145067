// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rewardcal/error.hpp"

namespace rewardcal {

using json = nlohmann::json;

/// One problem found while ingesting a line-delimited file.
struct Diagnostic {
    ErrorCode code;
    std::string file;
    std::size_t line = 0; // 1-based; 0 when the problem is not tied to a line
    std::string message;

    std::string to_string() const {
        std::string out(rewardcal::to_string(code));
        out += ": ";
        if (!file.empty()) {
            out += file;
            if (line > 0) out += ":" + std::to_string(line);
            out += ": ";
        }
        out += message;
        return out;
    }
};

/// Raised after a whole file set has been scanned; carries every diagnostic.
class IngestError : public Error {
public:
    explicit IngestError(std::vector<Diagnostic> diagnostics)
        : Error(diagnostics.empty() ? ErrorCode::MalformedRecord : diagnostics.front().code,
                summarize(diagnostics)),
          diagnostics_(std::move(diagnostics)) {}

    const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string summarize(const std::vector<Diagnostic>& diagnostics) {
        if (diagnostics.empty()) return "ingestion failed";
        std::string msg = diagnostics.front().file;
        if (diagnostics.front().line > 0) msg += ":" + std::to_string(diagnostics.front().line);
        msg += ": " + diagnostics.front().message;
        if (diagnostics.size() > 1)
            msg += " (+" + std::to_string(diagnostics.size() - 1) + " more)";
        return msg;
    }

    std::vector<Diagnostic> diagnostics_;
};

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    return in;
}

/// Calls `fn(line_number, record)` for every non-blank line. Lines that are
/// not JSON objects are reported into `diags` and skipped.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, std::vector<Diagnostic>& diags, Fn&& fn) {
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (record.is_discarded() || !record.is_object()) {
            diags.push_back({ErrorCode::MalformedRecord, path.string(), line_no, "not a JSON object"});
            continue;
        }
        fn(line_no, record);
    }
}

/// Reads a required string member, reporting absence or wrong type.
inline bool read_string(const json& record, const char* key, std::string& out) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) return false;
    out = it->get<std::string>();
    return true;
}

} // namespace rewardcal
