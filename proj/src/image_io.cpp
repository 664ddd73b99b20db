#include "dropreg/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "dropreg/errors.hpp"

namespace dropreg {
namespace {

int pnm_next_token(std::istream& in) {
    // Skips whitespace and '#' comments, returns the next integer.
    for (;;) {
        int ch = in.get();
        if (ch == '#') {
            while (ch != '\n' && ch != EOF) ch = in.get();
            continue;
        }
        if (ch == EOF) throw IoError("pnm: truncated header");
        if (std::isspace(ch)) continue;
        in.unget();
        int value = 0;
        in >> value;
        if (!in) throw IoError("pnm: malformed header token");
        return value;
    }
}

ImageU8 read_pnm(std::istream& in, const std::string& path) {
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw IoError("pnm: unsupported magic in " + path);
    const std::size_t channels = kind == '6' ? 3 : 1;
    const int w = pnm_next_token(in);
    const int h = pnm_next_token(in);
    const int maxval = pnm_next_token(in);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IoError("pnm: expected 8-bit image in " + path);
    in.get();  // single whitespace after maxval

    ImageU8 image(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!in) throw IoError("pnm: truncated pixel data in " + path);
    return image;
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;

    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

// keep_palette_indices: palette images yield index values instead of RGB.
ImageU8 read_png_file(const std::string& path, bool keep_palette_indices) {
    PngReader r;
    r.fp = std::fopen(path.c_str(), "rb");
    if (!r.fp) throw IoError("cannot open " + path);

    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw IoError("png: allocation failure");
    if (setjmp(png_jmpbuf(r.png))) throw IoError("png: decode error in " + path);

    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    const png_uint_32 width = png_get_image_width(r.png, r.info);
    const png_uint_32 height = png_get_image_height(r.png, r.info);
    const png_byte color_type = png_get_color_type(r.png, r.info);
    const png_byte bit_depth = png_get_bit_depth(r.png, r.info);

    if (bit_depth == 16) png_set_strip_16(r.png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        if (keep_palette_indices) {
            if (bit_depth < 8) png_set_packing(r.png);  // one index per byte
        } else {
            png_set_palette_to_rgb(r.png);
        }
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS) && !keep_palette_indices)
        png_set_tRNS_to_alpha(r.png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    const png_size_t rowbytes = png_get_rowbytes(r.png, r.info);
    const std::size_t channels = rowbytes / width;
    if (channels != 1 && channels != 3) throw IoError("png: unsupported channel layout in " + path);

    ImageU8 image(height, width, channels);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y)
        rows[y] = image.pixels.data() + y * width * channels;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return image;
}

void write_png_file(const std::string& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw IoError("png: can only write gray or rgb images");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) {
        std::fclose(fp);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png: encode error for " + path);
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(image.pixels.data() +
                                                 y * image.width * image.channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

ImageU8 read_jpeg_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);

    jpeg_decompress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 image(cinfo.output_height, cinfo.output_width, 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = image.pixels.data() + cinfo.output_scanline * image.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return image;
}

enum class Format { Pnm, Png, Jpeg, Unknown };

Format sniff(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    unsigned char head[4] = {};
    in.read(reinterpret_cast<char*>(head), sizeof(head));
    if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return Format::Pnm;
    if (head[0] == 0x89 && head[1] == 'P' && head[2] == 'N' && head[3] == 'G') return Format::Png;
    if (head[0] == 0xFF && head[1] == 0xD8) return Format::Jpeg;
    return Format::Unknown;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    switch (sniff(path)) {
        case Format::Pnm: {
            std::ifstream in(path, std::ios::binary);
            return read_pnm(in, path);
        }
        case Format::Png: return read_png_file(path, false);
        case Format::Jpeg: return read_jpeg_file(path);
        case Format::Unknown: break;
    }
    throw IoError("unrecognized image format: " + path);
}

LabelMap read_label_image(const std::string& path) {
    ImageU8 image;
    switch (sniff(path)) {
        case Format::Pnm: {
            std::ifstream in(path, std::ios::binary);
            image = read_pnm(in, path);
            break;
        }
        case Format::Png: image = read_png_file(path, true); break;
        default: throw IoError("label maps must be PGM or PNG: " + path);
    }
    if (image.channels != 1)
        throw DataError("label map has " + std::to_string(image.channels) +
                        " channels, expected palette indices or grayscale: " + path);
    LabelMap map(image.height, image.width);
    map.values = std::move(image.pixels);
    return map;
}

void write_ppm(const std::string& path, const ImageU8& image) {
    if (image.channels != 3) throw IoError("ppm: need a 3-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("ppm write failed: " + path);
}

void write_pgm(const std::string& path, const ImageU8& image) {
    if (image.channels != 1) throw IoError("pgm: need a 1-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("pgm write failed: " + path);
}

void write_png(const std::string& path, const ImageU8& image) { write_png_file(path, image); }

void write_image(const std::string& path, const ImageU8& image) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".png") return write_png(path, image);
    if (ext == ".ppm") return write_ppm(path, image);
    if (ext == ".pgm") return write_pgm(path, image);
    throw IoError("unsupported output extension '" + ext + "' for " + path);
}

}  // namespace dropreg
