#pragma once

#include <png.h>
#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "recam/activation.hpp"
#include "recam/core.hpp"
#include "recam/evalstats.hpp"
#include "recam/losses.hpp"
#include "recam/nets.hpp"
#include "recam/refine.hpp"
#include "recam/synthgen.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace recam::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files.

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temp file, then renames over the target.
inline void atomic_write(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
        throw IoError("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Little-endian binary helpers.

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void bytes(std::string_view s) { buf_.append(s); }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw IoError(what_ + ": truncated file");
    }
    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// PNG through the libpng simplified API.

inline std::string encode_png(const std::vector<std::uint8_t>& pixels, int height, int width, bool rgb) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
        throw IoError(std::string("PNG encode: ") + img.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
        throw IoError(std::string("PNG encode: ") + img.message);
    out.resize(size);
    return out;
}

inline std::vector<std::uint8_t> decode_png(std::string_view bytes, bool rgb, int& height, int& width) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw IoError(std::string("PNG decode: ") + img.message);
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr))
        throw IoError(std::string("PNG decode: ") + img.message);
    height = static_cast<int>(img.height);
    width = static_cast<int>(img.width);
    return px;
}

inline std::string encode_image_png(const Tensor3<float>& x) {
    if (x.channels != 3) throw ContractError("RGB image expected");
    std::vector<std::uint8_t> px(static_cast<std::size_t>(x.height) * x.width * 3);
    for (int i = 0; i < x.height; ++i)
        for (int j = 0; j < x.width; ++j)
            for (int c = 0; c < 3; ++c)
                px[(static_cast<std::size_t>(i) * x.width + j) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(x(c, i, j), 0.0f, 1.0f) * 255.0f));
    return encode_png(px, x.height, x.width, true);
}

inline Tensor3<float> decode_image_png(std::string_view bytes) {
    int h = 0, w = 0;
    const auto px = decode_png(bytes, true, h, w);
    Tensor3<float> x(3, h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) x(c, i, j) = px[(static_cast<std::size_t>(i) * w + j) * 3 + c] / 255.0f;
    return x;
}

inline std::string encode_mask_png(const Grid<std::uint8_t>& m) { return encode_png(m.data, m.height, m.width, false); }

inline Grid<std::uint8_t> decode_mask_png(std::string_view bytes) {
    int h = 0, w = 0;
    auto px = decode_png(bytes, false, h, w);
    Grid<std::uint8_t> m(h, w);
    m.data = std::move(px);
    return m;
}

// ---------------------------------------------------------------------------
// CSV.

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string fmt_sci(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IoError("CSV column '" + name + "' missing");
    }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += cells[i];
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size()) throw IoError("CSV row has " + std::to_string(cells.size()) + " cells");
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw IoError("CSV is empty");
    return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path)); }

// ---------------------------------------------------------------------------
// Corpus on disk: images/<id>.png, masks/<id>.png, labels.csv, manifest.json.

inline json spec_to_json(const DatasetSpec& s) {
    return {{"num_classes", s.num_classes},
            {"confusable_groups", s.confusable_groups},
            {"height", s.height},
            {"width", s.width},
            {"single_label_fraction", s.single_label_fraction},
            {"max_objects_per_image", s.max_objects_per_image},
            {"background_styles", s.background_styles},
            {"seed", s.seed},
            {"min_radius", s.min_radius},
            {"max_radius", s.max_radius},
            {"noise", s.noise},
            {"glyph_size", s.glyph_size},
            {"glyph_pitch", s.glyph_pitch}};
}

inline DatasetSpec spec_from_json(const json& j) {
    DatasetSpec s;
    s.num_classes = j.at("num_classes");
    s.confusable_groups = j.at("confusable_groups").get<std::vector<std::vector<int>>>();
    s.height = j.at("height");
    s.width = j.at("width");
    s.single_label_fraction = j.at("single_label_fraction");
    s.max_objects_per_image = j.at("max_objects_per_image");
    s.background_styles = j.at("background_styles");
    s.seed = j.at("seed");
    s.min_radius = j.at("min_radius");
    s.max_radius = j.at("max_radius");
    s.noise = j.at("noise");
    s.glyph_size = j.at("glyph_size");
    s.glyph_pitch = j.at("glyph_pitch");
    return s;
}

struct Corpus {
    DatasetSpec spec;
    std::vector<ImageSample> train, val;
    std::string content_hash;
};

inline std::string labels_csv(const Corpus& c) {
    CsvTable t;
    t.header = {"id", "split"};
    for (int k = 0; k < c.spec.num_classes; ++k) t.header.push_back("k_" + std::to_string(k));
    auto add = [&](const std::vector<ImageSample>& set, const char* split) {
        for (const auto& s : set) {
            std::vector<std::string> row{s.id, split};
            for (int v : s.label) row.push_back(std::to_string(v));
            t.rows.push_back(std::move(row));
        }
    };
    add(c.train, "train");
    add(c.val, "val");
    return t.str();
}

/// Hash over labels.csv and every PNG in id order.
inline std::string corpus_hash(const std::string& labels, const std::vector<std::pair<std::string, std::string>>& files) {
    std::string acc = sha256_hex(labels);
    for (const auto& [name, bytes] : files) acc += name + sha256_hex(bytes);
    return sha256_hex(acc);
}

inline void save_corpus(const fs::path& dir, Corpus& c) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto* set : {&c.train, &c.val})
        for (const auto& s : *set) {
            files.emplace_back("images/" + s.id + ".png", encode_image_png(s.pixels));
            files.emplace_back("masks/" + s.id + ".png", encode_mask_png(s.gt_mask));
        }
    const auto labels = labels_csv(c);
    for (const auto& [name, bytes] : files) atomic_write(dir / name, bytes);
    atomic_write(dir / "labels.csv", labels);
    c.content_hash = corpus_hash(labels, files);
    json m{{"spec", spec_to_json(c.spec)},
           {"train_count", c.train.size()},
           {"val_count", c.val.size()},
           {"content_hash", c.content_hash}};
    atomic_write(dir / "manifest.json", m.dump(2) + "\n");
}

inline Corpus load_corpus(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw DependencyError(manifest_path.string());
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw IoError("corpus manifest: " + std::string(e.what()));
    }
    Corpus c;
    c.spec = spec_from_json(m.at("spec"));
    c.content_hash = m.value("content_hash", "");
    const auto labels_path = dir / "labels.csv";
    if (!fs::exists(labels_path)) throw DependencyError(labels_path.string());
    const auto labels_text = read_file(labels_path);
    const auto t = parse_csv(labels_text);
    const int K = c.spec.num_classes;
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& row : t.rows) {
        ImageSample s;
        s.id = row[0];
        for (int k = 0; k < K; ++k) s.label.push_back(std::stoi(row[2 + k]));
        const auto img_path = dir / "images" / (s.id + ".png");
        const auto mask_path = dir / "masks" / (s.id + ".png");
        if (!fs::exists(img_path)) throw DependencyError(img_path.string());
        if (!fs::exists(mask_path)) throw DependencyError(mask_path.string());
        auto img = read_file(img_path);
        auto mask = read_file(mask_path);
        s.pixels = decode_image_png(img);
        s.gt_mask = decode_mask_png(mask);
        files.emplace_back("images/" + s.id + ".png", std::move(img));
        files.emplace_back("masks/" + s.id + ".png", std::move(mask));
        (row[1] == "train" ? c.train : c.val).push_back(std::move(s));
    }
    // Files were hashed in (train, val) order when saved; labels.csv lists them the same way.
    const auto hash = corpus_hash(labels_text, files);
    if (!c.content_hash.empty() && hash != c.content_hash)
        throw IoError("corpus content hash mismatch in " + dir.string());
    c.content_hash = hash;
    return c;
}

// ---------------------------------------------------------------------------
// Model checkpoints: "RCAM1", u32 config length, JSON config, u32 array count,
// then per array: u16 name length, name, u32 ndims, u32 dims..., f32 values.

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

inline std::string encode_checkpoint(const json& config, const std::vector<NamedArray>& arrays) {
    ByteWriter w;
    w.bytes("RCAM1");
    const auto cfg = config.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
        w.bytes(a.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(a.dims.size()));
        std::size_t n = 1;
        for (auto d : a.dims) {
            w.put<std::uint32_t>(d);
            n *= d;
        }
        if (n != a.values.size()) throw ContractError("checkpoint array " + a.name + " has inconsistent dims");
        for (float v : a.values) w.put<float>(v);
    }
    return w.str();
}

inline std::pair<json, std::vector<NamedArray>> decode_checkpoint(std::string_view bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.bytes(5) != "RCAM1") throw IoError("checkpoint: bad magic");
    const auto len = r.get<std::uint32_t>();
    json cfg;
    try {
        cfg = json::parse(r.bytes(len));
    } catch (const json::exception& e) {
        throw IoError("checkpoint config: " + std::string(e.what()));
    }
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        a.name = std::string(r.bytes(r.get<std::uint16_t>()));
        a.dims.resize(r.get<std::uint32_t>());
        std::size_t n = 1;
        for (auto& d : a.dims) {
            d = r.get<std::uint32_t>();
            n *= d;
        }
        a.values.resize(n);
        for (auto& v : a.values) v = r.get<float>();
    }
    if (!r.done()) throw IoError("checkpoint: trailing bytes");
    return {std::move(cfg), std::move(arrays)};
}

inline json arch_to_json(const ArchConfig& a) {
    return {{"widths", a.widths}, {"strides", a.strides}, {"num_classes", a.num_classes}, {"head_bias", a.head_bias}};
}

inline ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    a.widths = j.at("widths").get<std::vector<int>>();
    a.strides = j.at("strides").get<std::vector<int>>();
    a.num_classes = j.at("num_classes");
    a.head_bias = j.at("head_bias");
    a.validate();
    return a;
}

namespace detail {

template <typename S>
std::vector<std::vector<std::uint32_t>> param_dims(S& s);

inline std::vector<std::uint32_t> conv_dims(const Conv2d<float>& l, bool bias) {
    if (bias) return {static_cast<std::uint32_t>(l.out_channels)};
    return {static_cast<std::uint32_t>(l.out_channels), static_cast<std::uint32_t>(l.in_channels),
            static_cast<std::uint32_t>(l.kernel), static_cast<std::uint32_t>(l.kernel)};
}

template <typename S>
std::vector<NamedArray> collect(S& s, const std::function<std::vector<std::uint32_t>(const std::string&)>& dims) {
    std::vector<NamedArray> out;
    for_each_param(s, [&](const std::string& name, std::span<float> v) {
        out.push_back({name, dims(name), std::vector<float>(v.begin(), v.end())});
    });
    return out;
}

template <typename S>
void restore(S& s, const std::vector<NamedArray>& arrays, const std::string& what) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    std::size_t used = 0;
    for_each_param(s, [&](const std::string& name, std::span<float> v) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError(what + ": array " + name + " missing");
        if (it->second->values.size() != v.size()) throw IoError(what + ": array " + name + " has the wrong size");
        std::copy(it->second->values.begin(), it->second->values.end(), v.begin());
        ++used;
    });
    if (used != arrays.size()) throw IoError(what + ": unexpected extra arrays");
}

} // namespace detail

/// `extra` entries are merged into the checkpoint's JSON header.
inline std::string encode_classifier(ClassifierState<float> s, const json& extra = json::object()) {
    json cfg{{"kind", "classifier"}, {"arch", arch_to_json(s.arch)}, {"seed", s.seed}, {"lambda", s.lambda}};
    for (const auto& [k, v] : extra.items()) cfg[k] = v;
    const int K = s.num_classes(), C = s.channels();
    auto& enc = s.encoder;
    const auto arrays = detail::collect(s, [&](const std::string& name) -> std::vector<std::uint32_t> {
        if (name.rfind("encoder.", 0) == 0) {
            const auto dot = name.find('.', 8);
            const auto& l = enc.layers[std::stoul(name.substr(8, dot - 8))];
            return detail::conv_dims(l, name.ends_with(".bias"));
        }
        if (name.ends_with(".bias")) return {static_cast<std::uint32_t>(K)};
        return {static_cast<std::uint32_t>(K), static_cast<std::uint32_t>(C)};
    });
    return encode_checkpoint(cfg, arrays);
}

inline json checkpoint_header(std::string_view bytes) { return decode_checkpoint(bytes).first; }

inline ClassifierState<float> decode_classifier(std::string_view bytes) {
    auto [cfg, arrays] = decode_checkpoint(bytes);
    if (cfg.value("kind", "") != "classifier") throw IoError("checkpoint does not hold a classifier");
    ClassifierState<float> s(arch_from_json(cfg.at("arch")));
    s.seed = cfg.at("seed");
    s.lambda = cfg.at("lambda");
    detail::restore(s, arrays, "classifier checkpoint");
    return s;
}

inline std::string encode_segmenter(SegmenterState<float> s) {
    json cfg{{"kind", "segmenter"}, {"num_classes", s.cfg.num_classes}, {"width", s.cfg.width}};
    auto& layers = s.layers;
    const auto arrays = detail::collect(s, [&](const std::string& name) {
        const auto& l = layers[std::stoul(name.substr(4, name.find('.', 4) - 4))];
        return detail::conv_dims(l, name.ends_with(".bias"));
    });
    return encode_checkpoint(cfg, arrays);
}

inline SegmenterState<float> decode_segmenter(std::string_view bytes) {
    auto [cfg, arrays] = decode_checkpoint(bytes);
    if (cfg.value("kind", "") != "segmenter") throw IoError("checkpoint does not hold a segmenter");
    SegmenterConfig sc;
    sc.num_classes = cfg.at("num_classes");
    sc.width = cfg.at("width");
    SegmenterState<float> s(sc);
    detail::restore(s, arrays, "segmenter checkpoint");
    return s;
}

// ---------------------------------------------------------------------------
// "RMAP": per image, records of (u16 class, u16 H, u16 W, f32 values row-major)
// until end of file. One record per positive class.

inline std::string encode_rmap(const std::vector<ActivationMap<float>>& maps) {
    ByteWriter w;
    w.bytes("RMAP");
    for (const auto& m : maps) {
        if (m.raw.height > 65535 || m.raw.width > 65535) throw ContractError("RMAP: map too large");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(m.cls));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(m.raw.height));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(m.raw.width));
        for (float v : m.raw.data) w.put<float>(v);
    }
    return w.str();
}

inline std::vector<ActivationMap<float>> decode_rmap(std::string_view bytes) {
    ByteReader r(bytes, "RMAP");
    if (r.bytes(4) != "RMAP") throw IoError("RMAP: bad magic");
    std::vector<ActivationMap<float>> maps;
    while (!r.done()) {
        ActivationMap<float> m;
        m.cls = r.get<std::uint16_t>();
        const int h = r.get<std::uint16_t>(), w = r.get<std::uint16_t>();
        m.raw = Grid<float>(h, w);
        for (auto& v : m.raw.data) v = r.get<float>();
        m.normalized = normalize_map(m.raw);
        maps.push_back(std::move(m));
    }
    return maps;
}

// ---------------------------------------------------------------------------
// "RWLK": u32 N, u32 nnz, then (u32 row, u32 col, f64 value) triplets; the
// grid shape travels in two extra u32 fields after the magic.

inline std::string encode_rwlk(const TransitionMatrix& t) {
    ByteWriter w;
    w.bytes("RWLK");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.height));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.width));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.nnz()));
    for (std::size_t r = 0; r < t.size(); ++r)
        for (auto e = t.row_ptr[r]; e < t.row_ptr[r + 1]; ++e) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(r));
            w.put<std::uint32_t>(t.col[e]);
            w.put<double>(t.value[e]);
        }
    return w.str();
}

inline TransitionMatrix decode_rwlk(std::string_view bytes) {
    ByteReader r(bytes, "RWLK");
    if (r.bytes(4) != "RWLK") throw IoError("RWLK: bad magic");
    const int h = static_cast<int>(r.get<std::uint32_t>());
    const int w = static_cast<int>(r.get<std::uint32_t>());
    const auto n = r.get<std::uint32_t>();
    if (static_cast<std::size_t>(h) * w != n) throw IoError("RWLK: node count disagrees with grid shape");
    const auto nnz = r.get<std::uint32_t>();
    std::vector<TransitionMatrix::Triplet> entries(nnz);
    for (auto& e : entries) {
        e.row = r.get<std::uint32_t>();
        e.col = r.get<std::uint32_t>();
        e.value = r.get<double>();
    }
    if (!r.done()) throw IoError("RWLK: trailing bytes");
    return TransitionMatrix::from_triplets(h, w, entries);
}

// ---------------------------------------------------------------------------
// Configuration: INI sections of key = value, checked against a schema.

enum class ValueKind { integer, real, boolean, text, int_list, real_list };

struct ConfigKey {
    ValueKind kind;
    std::string default_value;
    std::vector<std::string> choices;  // for text keys; empty = free text
};

class Config {
public:
    using Schema = std::map<std::string, ConfigKey>;

    explicit Config(Schema schema) : schema_(std::move(schema)) {
        for (const auto& [k, v] : schema_) values_[k] = v.default_value;
    }

    void load_file(const fs::path& path) {
        if (!fs::exists(path)) throw DependencyError(path.string());
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(path.string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty()) {
                set(section, body.data());
                continue;
            }
            for (const auto& [key, value] : body) set(section + "." + key, value.data());
        }
    }

    /// Assigns one key; the value is validated against the schema.
    void set(const std::string& key, const std::string& value) {
        auto it = schema_.find(key);
        if (it == schema_.end()) throw ConfigError("unknown config key '" + key + "'");
        check(key, it->second, value);
        values_[key] = value;
    }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }
    long long integer(const std::string& key) const { return std::stoll(raw(key)); }
    double real(const std::string& key) const { return std::stod(raw(key)); }
    bool boolean(const std::string& key) const {
        const auto& v = raw(key);
        return v == "true" || v == "1" || v == "yes";
    }
    std::vector<int> int_list(const std::string& key) const {
        std::vector<int> out;
        for (const auto& part : split(raw(key), ' '))
            if (!part.empty()) out.push_back(std::stoi(part));
        return out;
    }
    std::vector<double> real_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& part : split(raw(key), ' '))
            if (!part.empty()) out.push_back(std::stod(part));
        return out;
    }

    /// The full configuration as INI text, one section per prefix.
    std::string dump() const {
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
        for (const auto& [k, v] : values_) {
            const auto dot = k.find('.');
            sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
        }
        std::string out;
        for (const auto& [name, entries] : sections) {
            out += "[" + name + "]\n";
            for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
            out += "\n";
        }
        return out;
    }

    json to_json() const {
        json j = json::object();
        for (const auto& [k, v] : values_) j[k] = v;
        return j;
    }

private:
    static void check(const std::string& key, const ConfigKey& spec, const std::string& value) {
        auto bad = [&](const char* what) { throw ConfigError("config key '" + key + "': " + what + " (got '" + value + "')"); };
        try {
            std::size_t pos = 0;
            switch (spec.kind) {
            case ValueKind::integer:
                std::stoll(value, &pos);
                if (pos != value.size()) bad("expected an integer");
                break;
            case ValueKind::real: {
                const double d = std::stod(value, &pos);
                if (pos != value.size() || !std::isfinite(d)) bad("expected a real number");
                break;
            }
            case ValueKind::boolean:
                if (value != "true" && value != "false" && value != "1" && value != "0" && value != "yes" && value != "no")
                    bad("expected true or false");
                break;
            case ValueKind::text:
                if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end())
                    bad("value not among the allowed choices");
                break;
            case ValueKind::int_list:
                for (const auto& part : split(value, ' ')) {
                    if (part.empty()) continue;
                    std::stoi(part, &pos);
                    if (pos != part.size()) bad("expected space-separated integers");
                }
                break;
            case ValueKind::real_list:
                for (const auto& part : split(value, ' ')) {
                    if (part.empty()) continue;
                    const double d = std::stod(part, &pos);
                    if (pos != part.size() || !std::isfinite(d)) bad("expected space-separated numbers");
                }
                break;
            }
        } catch (const std::invalid_argument&) {
            bad("malformed value");
        } catch (const std::out_of_range&) {
            bad("value out of range");
        }
    }

    Schema schema_;
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Run manifest: config snapshot, seeds, input hashes, artifacts with hashes,
// timings. Each command merges its own entries into <out>/manifest.json.

class RunManifest {
public:
    static constexpr const char* kCodeVersion = "recam 1.0.0";

    explicit RunManifest(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) {
            try {
                doc_ = json::parse(read_file(path_));
            } catch (const json::exception& e) {
                throw IoError("run manifest: " + std::string(e.what()));
            }
        }
        if (!doc_.is_object()) doc_ = json::object();
        doc_["code_version"] = kCodeVersion;
    }

    void set_config(const Config& cfg) { doc_["config"] = cfg.to_json(); }
    void set_seed(const std::string& what, std::uint64_t seed) { doc_["seeds"][what] = seed; }
    void add_input(const fs::path& p, const std::string& hash) { doc_["inputs"][p.generic_string()] = hash; }
    void add_artifact(const fs::path& p, const std::string& hash) { doc_["artifacts"][p.generic_string()] = hash; }
    void add_timing(const std::string& command, double seconds) { doc_["timings"][command] = seconds; }

    /// Writes an artifact atomically and records its hash.
    void write_artifact(const fs::path& p, std::string_view bytes) {
        atomic_write(p, bytes);
        add_artifact(p, sha256_hex(bytes));
    }

    void save() const { atomic_write(path_, doc_.dump(2) + "\n"); }
    const json& doc() const { return doc_; }

private:
    fs::path path_;
    json doc_;
};

// ---------------------------------------------------------------------------
// Report tables.

inline std::string eval_report_csv(const EvalReport& r) {
    CsvTable t;
    t.header = {"metric", "value"};
    t.rows.push_back({"miou", fmt(r.mean_iou)});
    t.rows.push_back({"mean_f1", fmt(r.mean_f1)});
    t.rows.push_back({"pixel_accuracy", fmt(r.pixel_accuracy)});
    for (std::size_t c = 0; c < r.class_iou.size(); ++c)
        t.rows.push_back({"iou_" + std::to_string(c), r.class_iou[c] ? fmt(*r.class_iou[c]) : "absent"});
    const auto& f = r.flaws;
    t.rows.push_back({"tp", std::to_string(f.tp)});
    t.rows.push_back({"fp_obj", std::to_string(f.fp_obj)});
    t.rows.push_back({"fn", std::to_string(f.fn)});
    t.rows.push_back({"fp_bg", std::to_string(f.fp_bg)});
    t.rows.push_back({"tn_bg", std::to_string(f.tn_bg)});
    t.rows.push_back({"tp_pct", fmt(f.percent(f.tp))});
    t.rows.push_back({"fp_obj_pct", fmt(f.percent(f.fp_obj))});
    t.rows.push_back({"fn_pct", fmt(f.percent(f.fn))});
    t.rows.push_back({"fp_bg_pct", fmt(f.percent(f.fp_bg))});
    t.rows.push_back({"single_miou", r.single_miou ? fmt(*r.single_miou) : "absent"});
    t.rows.push_back({"multi_miou", r.multi_miou ? fmt(*r.multi_miou) : "absent"});
    return t.str();
}

inline std::string regime_csv(const std::vector<RegimeRow>& rows) {
    CsvTable t;
    t.header = {"z_p", "z_q", "g1", "g2", "g3", "g4"};
    for (const auto& r : rows)
        t.rows.push_back({fmt(r.z_p), fmt(r.z_q), fmt_sci(r.g1), fmt_sci(r.g2), fmt_sci(r.g3), fmt_sci(r.g4)});
    return t.str();
}

} // namespace recam::io
