#include "diffbody/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "diffbody/error.hpp"

namespace diffbody {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Decoded {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

Decoded decode_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw InvalidArgument("cannot open " + path.string());
    std::array<unsigned char, 8> sig{};
    if (std::fread(sig.data(), 1, sig.size(), fp.get()) != sig.size() || png_sig_cmp(sig.data(), 0, 8) != 0)
        throw InvalidArgument("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    Decoded out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvalidArgument("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y)
        rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void encode_png(const std::filesystem::path& path, int height, int width, int channels,
                const std::vector<std::uint8_t>& bytes) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw InvalidArgument("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::vector<png_const_bytep> rows(height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw InvalidArgument("PNG encode failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * channels;
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

template <typename T>
void put_le(std::string& buf, T v) {
    static_assert(std::endian::native == std::endian::little, "heatmap container assumes little-endian host");
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw InvalidArgument("truncated heatmap container");
    return v;
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".partial";
    return tmp;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    const Decoded d = decode_png(path);
    const int channels = d.channels >= 3 ? 3 : 1;
    Image img(d.height, d.width, channels);
    auto out = img.data();
    std::size_t k = 0;
    for (std::size_t p = 0; p < static_cast<std::size_t>(d.height) * d.width; ++p)
        for (int c = 0; c < channels; ++c) out[k++] = d.bytes[p * d.channels + c] / 255.0;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.size());
    auto in = image.data();
    std::transform(in.begin(), in.end(), bytes.begin(), quantize);
    encode_png(path, image.height(), image.width(), image.channels(), bytes);
}

Mask read_mask_png(const std::filesystem::path& path) {
    const Decoded d = decode_png(path);
    Mask m(d.height, d.width);
    auto out = m.data();
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = d.bytes[p * d.channels] != 0 ? 1 : 0;
    return m;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<std::uint8_t> bytes(mask.data().size());
    std::transform(mask.data().begin(), mask.data().end(), bytes.begin(),
                   [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
    encode_png(path, mask.height(), mask.width(), 1, bytes);
}

void write_heatmap(const std::filesystem::path& path, const Heatmap& heatmap) {
    std::string buf = "DBHM";
    put_le<std::uint32_t>(buf, 1);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(heatmap.joints()));
    put_le<std::uint32_t>(buf, Heatmap::kResolution);
    put_le<std::uint32_t>(buf, Heatmap::kResolution);
    for (double v : heatmap.data()) put_le<float>(buf, static_cast<float>(v));
    write_file_atomic(path, buf);
}

Heatmap read_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DBHM", 4) != 0) throw InvalidArgument("not a heatmap container: " + path.string());
    if (get_le<std::uint32_t>(in) != 1) throw InvalidArgument("unsupported heatmap container version");
    const auto joints = get_le<std::uint32_t>(in);
    const auto h = get_le<std::uint32_t>(in);
    const auto w = get_le<std::uint32_t>(in);
    if (h != Heatmap::kResolution || w != Heatmap::kResolution)
        throw InvalidArgument("heatmap resolution must be 128x128");
    Heatmap hm(static_cast<int>(joints));
    for (double& v : hm.data()) v = get_le<float>(in);
    return hm;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidArgument("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw InvalidArgument("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_png_atomic(const std::filesystem::path& path, const Image& image) {
    const auto tmp = temp_sibling(path);
    write_png(tmp, image);
    std::filesystem::rename(tmp, path);
}

}  // namespace diffbody
