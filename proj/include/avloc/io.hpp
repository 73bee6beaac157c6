#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "avloc/common.hpp"

namespace avloc {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// WAV (16-bit PCM mono)
// ---------------------------------------------------------------------------
void save_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);
std::vector<double> load_wav(const std::string& path, int& sample_rate);

// ---------------------------------------------------------------------------
// Tensor archive: the container behind checkpoints, dictionaries and
// prediction dumps. Layout (little-endian):
//   magic "AVTA", u32 version, u64 header_len, header JSON, raw entry data.
// The header carries free-form metadata plus one descriptor per entry
// {name, dims, dtype f32|f64}. Entry payloads follow in descriptor order.
// ---------------------------------------------------------------------------
struct ArchiveEntry {
    std::string name;
    std::vector<int> dims;
    bool f64 = true;              // storage width; values held as double in memory
    std::vector<double> data;

    std::size_t count() const;
};

struct TensorArchive {
    Json meta = Json::object();
    std::vector<ArchiveEntry> entries;

    void add(const std::string& name, std::vector<int> dims, std::vector<double> data, bool f64 = true);
    const ArchiveEntry& get(const std::string& name) const;
    bool has(const std::string& name) const;

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);
};

// ---------------------------------------------------------------------------
// JSON file helpers
// ---------------------------------------------------------------------------
void write_json_file(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);

void write_text_file(const std::string& path, const std::string& text);

// Appends JSON-lines records (training logs).
class JsonlWriter {
public:
    JsonlWriter() = default;
    explicit JsonlWriter(const std::string& path);
    void write(const Json& record);
    bool open() const { return !path_.empty(); }

private:
    std::string path_;
};

std::vector<Json> read_jsonl(const std::string& path);

} // namespace avloc
