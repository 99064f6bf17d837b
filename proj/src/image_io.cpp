#include "truemoe/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "truemoe/errors.hpp"

namespace truemoe {
namespace {

std::string describe_signature(std::span<const std::uint8_t> bytes) {
    std::ostringstream os;
    os << "unsupported image signature '";
    for (std::size_t i = 0; i < std::min<std::size_t>(4, bytes.size()); ++i) {
        const unsigned char c = bytes[i];
        if (std::isprint(c)) {
            os << c;
        } else {
            static const char* hex = "0123456789abcdef";
            os << "\\x" << hex[c >> 4] << hex[c & 15];
        }
    }
    os << "'";
    return os.str();
}

RawImage decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw DecodeError(std::string("png decode failed: ") + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    RawImage out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DecodeError("png decode failed: " + msg);
    }
    return out;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::size_t read_ppm_token(std::span<const std::uint8_t> b, std::size_t& pos) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::size_t v = 0;
    bool any = false;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        ++pos;
        any = true;
        if (v > (1u << 24)) throw DecodeError("ppm header value too large");
    }
    if (!any) throw DecodeError("malformed ppm header");
    return v;
}

RawImage decode_ppm(std::span<const std::uint8_t> b) {
    std::size_t pos = 2;
    const std::size_t w = read_ppm_token(b, pos);
    const std::size_t h = read_ppm_token(b, pos);
    const std::size_t maxval = read_ppm_token(b, pos);
    if (maxval != 255) throw DecodeError("only 8-bit ppm (maxval 255) is supported");
    if (pos >= b.size() || !std::isspace(b[pos])) throw DecodeError("malformed ppm header");
    ++pos;
    if (b.size() - pos < w * h * 3) throw DecodeError("truncated ppm payload");
    RawImage out{w, h, std::vector<std::uint8_t>(b.begin() + pos, b.begin() + pos + w * h * 3)};
    return out;
}

}  // namespace

RawImage decode_image(std::span<const std::uint8_t> bytes) {
    static const std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
    throw DecodeError(describe_signature(bytes));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

RawImage read_image_file(const std::filesystem::path& path) { return decode_image(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_ppm(const Tensor& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != 3) throw DimensionError("encode_ppm expects [3,H,W]");
    const std::size_t H = pixels.dim(1), W = pixels.dim(2);
    const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + H * W * 3);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(pixels.at(c, y, x), 0.0f, 1.0f);
                out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
            }
    return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& pixels) {
    const auto bytes = encode_ppm(pixels);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace truemoe
