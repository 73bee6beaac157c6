#include "avloc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace avloc {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

} // namespace

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

void save_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_wav: cannot open " + path);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    os.write("RIFF", 4);
    put_le<std::uint32_t>(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_le<std::uint32_t>(os, 16);
    put_le<std::uint16_t>(os, 1); // PCM
    put_le<std::uint16_t>(os, 1); // mono
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate * 2));
    put_le<std::uint16_t>(os, 2);
    put_le<std::uint16_t>(os, 16);
    os.write("data", 4);
    put_le<std::uint32_t>(os, data_bytes);
    for (const double s : samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        put_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(clamped * 32767.0)));
    }
    if (!os) throw IoError("save_wav: write failed for " + path);
}

std::vector<double> load_wav(const std::string& path, int& sample_rate) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_wav: cannot open " + path);
    char tag[5] = {0};
    is.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw IoError("load_wav: not a RIFF file: " + path);
    get_le<std::uint32_t>(is);
    is.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw IoError("load_wav: not a WAVE file: " + path);

    std::uint16_t channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<double> samples;
    while (is.read(tag, 4)) {
        const std::uint32_t chunk = get_le<std::uint32_t>(is);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            const std::uint16_t fmt = get_le<std::uint16_t>(is);
            channels = get_le<std::uint16_t>(is);
            rate = get_le<std::uint32_t>(is);
            get_le<std::uint32_t>(is);
            get_le<std::uint16_t>(is);
            bits = get_le<std::uint16_t>(is);
            if (fmt != 1 || channels != 1 || bits != 16)
                throw IoError("load_wav: expected 16-bit PCM mono: " + path);
            is.ignore(chunk > 16 ? chunk - 16 : 0);
        } else if (std::strncmp(tag, "data", 4) == 0) {
            samples.resize(chunk / 2);
            for (auto& s : samples) s = get_le<std::int16_t>(is) / 32767.0;
        } else {
            is.ignore(chunk);
        }
    }
    if (rate == 0) throw IoError("load_wav: missing fmt chunk: " + path);
    sample_rate = static_cast<int>(rate);
    return samples;
}

// ---------------------------------------------------------------------------
// Tensor archive
// ---------------------------------------------------------------------------

std::size_t ArchiveEntry::count() const {
    std::size_t n = 1;
    for (const int d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

void TensorArchive::add(const std::string& name, std::vector<int> dims, std::vector<double> data, bool f64) {
    ArchiveEntry e;
    e.name = name;
    e.dims = std::move(dims);
    e.f64 = f64;
    e.data = std::move(data);
    if (e.count() != e.data.size()) throw ShapeError("TensorArchive::add: dims do not match data size");
    entries.push_back(std::move(e));
}

const ArchiveEntry& TensorArchive::get(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw StateError("TensorArchive: missing entry '" + name + "'");
}

bool TensorArchive::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

void TensorArchive::save(const std::string& path) const {
    Json header;
    header["meta"] = meta;
    Json descs = Json::array();
    for (const auto& e : entries)
        descs.push_back(Json{{"name", e.name}, {"dims", e.dims}, {"dtype", e.f64 ? "f64" : "f32"}});
    header["entries"] = descs;
    const std::string head = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("TensorArchive::save: cannot open " + path);
    os.write("AVTA", 4);
    put_le<std::uint32_t>(os, 1);
    put_le<std::uint64_t>(os, head.size());
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& e : entries) {
        if (e.f64) {
            for (const double d : e.data) put_le<double>(os, d);
        } else {
            for (const double d : e.data) put_le<float>(os, static_cast<float>(d));
        }
    }
    if (!os) throw IoError("TensorArchive::save: write failed for " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StateError("TensorArchive::load: missing file " + path);
    char magic[5] = {0};
    is.read(magic, 4);
    if (std::strncmp(magic, "AVTA", 4) != 0) throw IoError("TensorArchive::load: bad magic in " + path);
    const std::uint32_t version = get_le<std::uint32_t>(is);
    if (version != 1) throw IoError("TensorArchive::load: unsupported version in " + path);
    const std::uint64_t head_len = get_le<std::uint64_t>(is);
    std::string head(head_len, '\0');
    is.read(head.data(), static_cast<std::streamsize>(head_len));
    Json header = Json::parse(head);

    TensorArchive ar;
    ar.meta = header.at("meta");
    for (const auto& d : header.at("entries")) {
        ArchiveEntry e;
        e.name = d.at("name").get<std::string>();
        e.dims = d.at("dims").get<std::vector<int>>();
        e.f64 = d.at("dtype").get<std::string>() == "f64";
        e.data.resize(e.count());
        if (e.f64) {
            for (auto& x : e.data) x = get_le<double>(is);
        } else {
            for (auto& x : e.data) x = static_cast<double>(get_le<float>(is));
        }
        ar.entries.push_back(std::move(e));
    }
    if (!is) throw IoError("TensorArchive::load: truncated file " + path);
    return ar;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_json_file: cannot open " + path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write_json_file: write failed for " + path);
}

Json read_json_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StateError("read_json_file: missing file " + path);
    Json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw IoError("read_json_file: parse error in " + path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_text_file: cannot open " + path);
    os << text;
}

JsonlWriter::JsonlWriter(const std::string& path) : path_(path) {
    std::ofstream os(path_, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("JsonlWriter: cannot open " + path_);
}

void JsonlWriter::write(const Json& record) {
    if (path_.empty()) return;
    std::ofstream os(path_, std::ios::binary | std::ios::app);
    os << record.dump() << "\n";
}

std::vector<Json> read_jsonl(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StateError("read_jsonl: missing file " + path);
    std::vector<Json> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(Json::parse(line));
    }
    return out;
}

} // namespace avloc
