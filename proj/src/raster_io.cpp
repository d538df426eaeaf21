#include "hdrdistill/raster_io.hpp"

#include <fstream>

namespace hdrdistill {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("truncated header field");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_f32(std::istream& is, std::vector<float>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!is) throw FormatError("truncated plane data");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

std::string read_magic(std::istream& is) {
    char m[4];
    is.read(m, 4);
    if (!is) throw FormatError("file too short for a magic tag");
    return std::string(m, 4);
}

}  // namespace

void write_raster(const std::string& path, const Raster& r) {
    if (r.magic.size() != 4) throw FormatError("magic must be 4 bytes");
    auto os = open_out(path);
    os.write(r.magic.data(), 4);
    put_u32(os, r.k);
    put_u32(os, r.c);
    put_u32(os, r.h);
    put_u32(os, r.w);
    put_f32(os, r.payload);
    if (!os) throw IoError("write failed: " + path);
}

Raster read_raster(const std::string& path, const std::string& expected_magic) {
    auto is = open_in(path);
    Raster r;
    r.magic = read_magic(is);
    if (r.magic != expected_magic) {
        throw FormatError("bad magic in " + path + ": got '" + r.magic + "', want '" +
                          expected_magic + "'");
    }
    r.k = get_u32(is);
    r.c = get_u32(is);
    r.h = get_u32(is);
    r.w = get_u32(is);
    // Formats in this family may carry extra payload beyond the k*c*h*w
    // planes (exposure lists, ground truth), so read to the end of file.
    std::streampos here = is.tellg();
    is.seekg(0, std::ios::end);
    std::streamoff bytes = is.tellg() - here;
    is.seekg(here);
    if (bytes < 0 || bytes % 4) throw FormatError("raster payload is not whole f32s");
    r.payload.resize(static_cast<std::size_t>(bytes) / 4);
    get_f32(is, r.payload);
    std::size_t n = static_cast<std::size_t>(r.k) * r.c * r.h * r.w;
    if (r.payload.size() < n) throw FormatError("raster payload shorter than its header");
    return r;
}

void write_raster_levels(const std::string& path, const std::string& magic, std::uint32_t base_h,
                         std::uint32_t base_w, const std::vector<RasterLevel>& levels) {
    if (magic.size() != 4) throw FormatError("magic must be 4 bytes");
    auto os = open_out(path);
    os.write(magic.data(), 4);
    put_u32(os, static_cast<std::uint32_t>(levels.size()));
    put_u32(os, 0);
    put_u32(os, base_h);
    put_u32(os, base_w);
    for (const auto& lvl : levels) {
        put_u32(os, lvl.c);
        put_u32(os, lvl.h);
        put_u32(os, lvl.w);
        put_f32(os, lvl.data);
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<RasterLevel> read_raster_levels(const std::string& path,
                                            const std::string& expected_magic,
                                            std::uint32_t* base_h, std::uint32_t* base_w) {
    auto is = open_in(path);
    std::string magic = read_magic(is);
    if (magic != expected_magic) {
        throw FormatError("bad magic in " + path + ": got '" + magic + "'");
    }
    std::uint32_t n_levels = get_u32(is);
    get_u32(is);  // reserved
    std::uint32_t h = get_u32(is);
    std::uint32_t w = get_u32(is);
    if (base_h) *base_h = h;
    if (base_w) *base_w = w;
    if (n_levels > 64) throw FormatError("implausible level count");
    std::vector<RasterLevel> levels(n_levels);
    for (auto& lvl : levels) {
        lvl.c = get_u32(is);
        lvl.h = get_u32(is);
        lvl.w = get_u32(is);
        std::size_t n = static_cast<std::size_t>(lvl.c) * lvl.h * lvl.w;
        if (n > (1u << 28)) throw FormatError("level implausibly large");
        lvl.data.resize(n);
        get_f32(is, lvl.data);
    }
    return levels;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kCkptMagic[] = "CKPT";

void put_name(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_name(std::istream& is) {
    std::uint32_t n = get_u32(is);
    if (n > 4096) throw CheckpointError("implausible tensor name length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw CheckpointError("truncated tensor name");
    return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const ParamGroup& params) {
    auto os = open_out(path);
    os.write(kCkptMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(params.items.size()));
    put_u32(os, 0);
    put_u32(os, 0);
    put_u32(os, 0);
    for (const auto& [name, t] : params.items) {
        put_name(os, name);
        const Shape& s = t.shape();
        put_u32(os, static_cast<std::uint32_t>(s.size()));
        for (int d : s) put_u32(os, static_cast<std::uint32_t>(d));
        auto v = t.values();
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed: " + path);
}

namespace {

ParamGroup read_checkpoint_impl(const std::string& path, const std::string* prefix) {
    auto is = open_in(path);
    if (read_magic(is) != kCkptMagic) throw CheckpointError("not a checkpoint: " + path);
    std::uint32_t count = get_u32(is);
    get_u32(is);
    get_u32(is);
    get_u32(is);
    ParamGroup out;
    for (std::uint32_t i = 0; i < count; i++) {
        std::string name = get_name(is);
        std::uint32_t ndims = get_u32(is);
        if (ndims > 8) throw CheckpointError("implausible tensor rank");
        Shape shape(ndims);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<int>(get_u32(is));
            n *= static_cast<std::size_t>(d);
        }
        if (n > (1u << 28)) throw CheckpointError("tensor implausibly large");
        if (prefix && name.rfind(*prefix, 0) != 0) {
            is.seekg(static_cast<std::streamoff>(n * sizeof(double)), std::ios::cur);
            if (!is) throw CheckpointError("truncated checkpoint");
            continue;
        }
        std::vector<double> v(n);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw CheckpointError("truncated tensor data");
        out.add(name, Tensor::variable(std::move(shape), std::move(v)));
    }
    return out;
}

}  // namespace

ParamGroup read_checkpoint(const std::string& path) { return read_checkpoint_impl(path, nullptr); }

ParamGroup read_checkpoint_section(const std::string& path, const std::string& prefix) {
    return read_checkpoint_impl(path, &prefix);
}

std::vector<std::string> checkpoint_tensor_names(const std::string& path) {
    auto is = open_in(path);
    if (read_magic(is) != kCkptMagic) throw CheckpointError("not a checkpoint: " + path);
    std::uint32_t count = get_u32(is);
    get_u32(is);
    get_u32(is);
    get_u32(is);
    std::vector<std::string> names;
    for (std::uint32_t i = 0; i < count; i++) {
        names.push_back(get_name(is));
        std::uint32_t ndims = get_u32(is);
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < ndims; d++) n *= get_u32(is);
        is.seekg(static_cast<std::streamoff>(n * sizeof(double)), std::ios::cur);
        if (!is) throw CheckpointError("truncated checkpoint");
    }
    return names;
}

}  // namespace hdrdistill
