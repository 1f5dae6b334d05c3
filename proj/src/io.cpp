#include "miscale/io.h"

#include <array>
#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace miscale::io {

namespace {

std::uint32_t read_be32(std::istream& in, const char* what)
{
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4))
        throw Error(ErrorKind::Format, std::string("missing ") + what + " in IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v)
{
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

void write_le32(std::ostream& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_le32(std::istream& in)
{
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw Error(ErrorKind::Format, "truncated raw tensor header");
    return b[0] | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

std::ifstream open_binary(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    return in;
}

int modality_code(Modality m) { return static_cast<int>(m); }

} // namespace

Dataset read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit)
{
    auto in = open_binary(path);
    const std::uint32_t magic = read_be32(in, "magic");
    if (magic != kIdxImagesMagic) {
        std::ostringstream os;
        os << "bad IDX magic 0x" << std::hex << std::setw(8) << std::setfill('0') << magic << " in " << path.string();
        throw Error(ErrorKind::Format, os.str());
    }
    const std::size_t count = read_be32(in, "count");
    const std::size_t rows = read_be32(in, "rows");
    const std::size_t cols = read_be32(in, "cols");
    if (rows == 0 || cols == 0) throw Error(ErrorKind::Format, "IDX image with zero extent");
    const std::size_t n = limit ? std::min(count, *limit) : count;
    if (n == 0) throw Error(ErrorKind::Format, "IDX file holds no images");

    const std::size_t d = rows * cols;
    std::vector<unsigned char> buf(n * d);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw Error(ErrorKind::Length, "IDX payload truncated: expected " + std::to_string(buf.size()) + " bytes, got "
                                           + std::to_string(in.gcount()));

    Matrix samples(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n * d; ++i) samples.data()[i] = buf[i] / 255.0;
    return Dataset(std::move(samples), Modality::Image, GridShape{rows, cols, 1});
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path)
{
    auto in = open_binary(path);
    const std::uint32_t magic = read_be32(in, "magic");
    if (magic != kIdxLabelsMagic) throw Error(ErrorKind::Format, "bad IDX label magic in " + path.string());
    const std::size_t count = read_be32(in, "count");
    std::vector<std::uint8_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) throw Error(ErrorKind::Length, "IDX label payload truncated");
    return labels;
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& pixels)
{
    if (rows * cols == 0 || pixels.size() % (rows * cols) != 0)
        throw Error(ErrorKind::Spec, "pixel buffer is not a whole number of images");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    write_be32(out, kIdxImagesMagic);
    write_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
    write_be32(out, static_cast<std::uint32_t>(rows));
    write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

Embeddings parse_embeddings(std::istream& in, std::size_t* width)
{
    Embeddings table;
    std::optional<std::size_t> w;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string token;
        if (!(ls >> token)) continue;
        std::vector<double> vec;
        std::string field;
        while (ls >> field) {
            try {
                std::size_t used = 0;
                vec.push_back(std::stod(field, &used));
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw Error(ErrorKind::Format, "non-numeric value '" + field + "' on embedding line " + std::to_string(lineno));
            }
        }
        if (vec.empty()) throw Error(ErrorKind::Format, "embedding line " + std::to_string(lineno) + " has no vector");
        if (w && *w != vec.size())
            throw Error(ErrorKind::Format, "embedding line " + std::to_string(lineno) + " has width "
                                               + std::to_string(vec.size()) + ", expected " + std::to_string(*w));
        w = vec.size();
        table.emplace(std::move(token), std::move(vec));
    }
    if (!w) throw Error(ErrorKind::Format, "embedding file is empty");
    if (width) *width = *w;
    return table;
}

Embeddings read_embeddings(const std::filesystem::path& path, std::size_t* width)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    return parse_embeddings(in, width);
}

std::vector<std::string> tokenize(std::istream& in)
{
    std::vector<std::string> tokens;
    std::string t;
    while (in >> t) tokens.push_back(t);
    return tokens;
}

Dataset embed_windows(const std::vector<std::string>& tokens, const Embeddings& embeddings, std::size_t embed_dim,
                      std::size_t seq_len, std::size_t stride)
{
    if (seq_len == 0 || stride == 0) throw Error(ErrorKind::Spec, "seq_len and stride must be positive");
    if (tokens.size() < seq_len)
        throw Error(ErrorKind::InsufficientData, "corpus has " + std::to_string(tokens.size())
                                                     + " tokens, fewer than seq_len " + std::to_string(seq_len));
    const std::size_t n = (tokens.size() - seq_len) / stride + 1;
    Matrix samples = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(seq_len * embed_dim));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < seq_len; ++t) {
            auto it = embeddings.find(tokens[i * stride + t]);
            if (it == embeddings.end()) continue;
            for (std::size_t e = 0; e < embed_dim; ++e)
                samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t * embed_dim + e)) = it->second[e];
        }
    }
    return Dataset(std::move(samples), Modality::TextEmbedding, std::nullopt, embed_dim);
}

Dataset ingest_embedded_text(const std::filesystem::path& corpus, const std::filesystem::path& embeddings,
                             std::size_t seq_len, std::size_t stride)
{
    std::size_t width = 0;
    const Embeddings table = read_embeddings(embeddings, &width);
    std::ifstream in(corpus);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + corpus.string());
    return embed_windows(tokenize(in), table, width, seq_len, stride);
}

std::filesystem::path descriptor_path(const std::filesystem::path& raw)
{
    return std::filesystem::path(raw.string() + ".json");
}

void write_raw(const std::filesystem::path& path, const Dataset& data, const std::string& extra_json)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write("MISC", 4);
    write_le32(out, static_cast<std::uint32_t>(data.size()));
    write_le32(out, static_cast<std::uint32_t>(data.dim()));
    const std::uint32_t flags = (data.grid() ? 1u : 0u) | (static_cast<std::uint32_t>(modality_code(data.modality())) << 1);
    write_le32(out, flags);

    const Matrix& m = data.samples();
    std::vector<char> bytes(static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(m.data()[i]);
        for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());

    nlohmann::json desc = nlohmann::json::parse(extra_json);
    desc["N"] = data.size();
    desc["D"] = data.dim();
    desc["modality"] = to_string(data.modality());
    if (data.grid()) desc["grid_shape"] = {data.grid()->rows, data.grid()->cols, data.grid()->channels};
    if (data.embed_dim()) desc["embed_dim"] = *data.embed_dim();
    std::ofstream dj(descriptor_path(path));
    dj << desc.dump(2) << "\n";
}

Dataset read_raw(const std::filesystem::path& path)
{
    auto in = open_binary(path);
    char magic[4] = {};
    if (!in.read(magic, 4) || std::string(magic, 4) != "MISC")
        throw Error(ErrorKind::Format, "not a raw tensor file: " + path.string());
    const std::size_t n = read_le32(in);
    const std::size_t d = read_le32(in);
    const std::uint32_t flags = read_le32(in);

    std::vector<unsigned char> bytes(n * d * 8);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw Error(ErrorKind::Length, "raw tensor payload truncated");
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n * d; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + b]} << (8 * b);
        m.data()[i] = std::bit_cast<double>(bits);
    }

    auto modality = static_cast<Modality>((flags >> 1) & 0x3);
    std::optional<GridShape> grid;
    std::optional<std::size_t> embed_dim;
    std::ifstream dj(descriptor_path(path));
    if (dj) {
        const auto desc = nlohmann::json::parse(dj);
        if (desc.contains("modality")) modality = modality_from_string(desc["modality"].get<std::string>());
        if (desc.contains("grid_shape")) {
            const auto& g = desc["grid_shape"];
            grid = GridShape{g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()};
        }
        if (desc.contains("embed_dim")) embed_dim = desc["embed_dim"].get<std::size_t>();
    } else if (flags & 1u) {
        throw Error(ErrorKind::Format, "grid-shaped tensor is missing its descriptor " + descriptor_path(path).string());
    }
    return Dataset(std::move(m), modality, grid, embed_dim);
}

void write_csv(const std::filesystem::path& path, const Dataset& data)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << std::setprecision(17);
    for (std::size_t j = 0; j < data.dim(); ++j) out << (j ? "," : "") << "x" << j;
    out << "\n";
    const Matrix& m = data.samples();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        out << "\n";
    }
}

} // namespace miscale::io
