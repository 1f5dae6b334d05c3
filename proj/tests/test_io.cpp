#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "miscale/io.h"
#include "support.h"

using namespace miscale;
using testing::scratch;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v)
{
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
}

// written by hand so the reader isn't only checked against its own writer
void write_idx(const fs::path& p, std::uint32_t magic, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
               std::size_t payload_bytes)
{
    std::ofstream out(p, std::ios::binary);
    put_be32(out, magic);
    put_be32(out, count);
    put_be32(out, rows);
    put_be32(out, cols);
    std::vector<char> buf(payload_bytes);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<char>(i % 251);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_text(const fs::path& p, const std::string& s)
{
    std::ofstream(p) << s;
}

} // namespace

TEST_CASE("IDX images: scaling and layout")
{
    const auto p = scratch("ten.idx");
    std::vector<std::uint8_t> px(10 * 28 * 28, 0);
    px[3 * 784 + 5 * 28 + 9] = 255;
    px[3 * 784 + 5 * 28 + 10] = 51;
    io::write_idx_images(p, 28, 28, px);

    const Dataset d = io::read_idx_images(p);
    CHECK(d.size() == 10);
    CHECK(d.dim() == 784);
    CHECK(d.grid() == GridShape{28, 28, 1});
    CHECK(d.modality() == Modality::Image);
    CHECK(d.samples()(3, 5 * 28 + 9) == 1.0);
    CHECK(d.samples()(3, 5 * 28 + 10) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(d.samples().minCoeff() >= 0.0);
    CHECK(d.samples().maxCoeff() <= 1.0);
}

TEST_CASE("IDX images: 60000-record header with limit 1000")
{
    const auto p = scratch("big.idx");
    write_idx(p, io::kIdxImagesMagic, 60000, 4, 4, 60000 * 16);
    const Dataset d = io::read_idx_images(p, 1000);
    CHECK(d.size() == 1000);
    CHECK(d.dim() == 16);
    // byte i of the payload was i % 251
    CHECK(d.samples()(999, 15) * 255.0 == doctest::Approx(double((999 * 16 + 15) % 251)));
    CHECK(io::read_idx_images(p).size() == 60000);
    CHECK(io::read_idx_images(p, 70000).size() == 60000);
}

TEST_CASE("IDX errors")
{
    const auto empty = scratch("empty.idx");
    write_text(empty, "");
    CHECK_ERROR_KIND(io::read_idx_images(empty), ErrorKind::Format);

    const auto bad = scratch("bad.idx");
    write_idx(bad, 0x00000802, 1, 2, 2, 4);
    CHECK_ERROR_KIND(io::read_idx_images(bad), ErrorKind::Format);

    const auto labels_as_images = scratch("labels.idx");
    {
        std::ofstream out(labels_as_images, std::ios::binary);
        put_be32(out, io::kIdxLabelsMagic);
        put_be32(out, 3);
        out.write("\x01\x02\x09", 3);
    }
    CHECK_ERROR_KIND(io::read_idx_images(labels_as_images), ErrorKind::Format);
    CHECK(io::read_idx_labels(labels_as_images) == std::vector<std::uint8_t>{1, 2, 9});

    const auto truncated = scratch("short.idx");
    write_idx(truncated, io::kIdxImagesMagic, 10, 4, 4, 10 * 16 - 1);
    CHECK_ERROR_KIND(io::read_idx_images(truncated), ErrorKind::Length);
    // a limit that stays inside the payload is fine
    CHECK(io::read_idx_images(truncated, 9).size() == 9);

    CHECK_ERROR_KIND(io::read_idx_images(scratch("does-not-exist.idx")), ErrorKind::Io);
}

TEST_CASE("embedded text: small corpus")
{
    std::istringstream emb("a 1 0\nb 0 1\n");
    std::size_t w = 0;
    const auto table = io::parse_embeddings(emb, &w);
    CHECK(w == 2);

    std::istringstream corpus("a b a b");
    const Dataset d = io::embed_windows(io::tokenize(corpus), table, w, 2, 2);
    CHECK(d.size() == 2);
    CHECK(d.dim() == 4);
    CHECK(d.modality() == Modality::TextEmbedding);
    CHECK(d.seq_len() == 2);
    Matrix expect(2, 4);
    expect << 1, 0, 0, 1, 1, 0, 0, 1;
    CHECK(d.samples() == expect);

    // stride 1 gives every window
    CHECK(io::embed_windows({"a", "b", "a", "b"}, table, 2, 2, 1).size() == 3);
}

TEST_CASE("embedded text: out-of-vocabulary tokens are zero")
{
    io::Embeddings table{{"a", {1.5, -2.0, 3.0}}};
    const Dataset d = io::embed_windows({"a", "zzz", "a"}, table, 3, 3, 1);
    CHECK(d.size() == 1);
    CHECK(d.samples().row(0).segment(0, 3).isApprox(Eigen::RowVector3d(1.5, -2.0, 3.0)));
    CHECK(d.samples().row(0).segment(3, 3).isZero());
    CHECK(d.samples().row(0).segment(6, 3).isApprox(Eigen::RowVector3d(1.5, -2.0, 3.0)));
}

TEST_CASE("embedded text: 50 tokens of 50-dim vectors")
{
    io::Embeddings table;
    std::vector<std::string> tokens;
    for (int i = 0; i < 60; ++i) {
        const std::string t = "w" + std::to_string(i % 7);
        table[t] = std::vector<double>(50, i % 7);
        tokens.push_back(t);
    }
    const Dataset d = io::embed_windows(tokens, table, 50, 50, 10);
    CHECK(d.dim() == 2500);
    CHECK(d.size() == 2);
}

TEST_CASE("embedded text: errors")
{
    std::istringstream ragged("a 1 0\nb 0 1 2\n");
    CHECK_ERROR_KIND(io::parse_embeddings(ragged), ErrorKind::Format);
    std::istringstream nonnum("a 1 x\n");
    CHECK_ERROR_KIND(io::parse_embeddings(nonnum), ErrorKind::Format);
    std::istringstream blank("\n\n");
    CHECK_ERROR_KIND(io::parse_embeddings(blank), ErrorKind::Format);

    io::Embeddings table{{"a", {1.0}}};
    CHECK_ERROR_KIND(io::embed_windows({"a", "a"}, table, 1, 3, 1), ErrorKind::InsufficientData);

    const auto corpus = scratch("corpus.txt");
    const auto emb = scratch("emb.txt");
    write_text(corpus, "a b\n  a\tb a\n");
    write_text(emb, "a 1 0\nb 0 1\n");
    const Dataset d = io::ingest_embedded_text(corpus, emb, 2, 1);
    CHECK(d.size() == 4);
    CHECK(*d.embed_dim() == 2);
    CHECK_ERROR_KIND(io::ingest_embedded_text(corpus, emb, 6, 1), ErrorKind::InsufficientData);
}

TEST_CASE("raw tensor round trip")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    Matrix m(7, 12);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    m(0, 0) = std::numeric_limits<double>::denorm_min();
    m(0, 1) = -0.0;

    const auto p = scratch("grid.raw");
    const Dataset grid(m, Modality::Image, GridShape{2, 2, 3});
    io::write_raw(p, grid, R"({"note": "hello"})");
    CHECK(io::read_raw(p) == grid);
    CHECK(std::signbit(io::read_raw(p).samples()(0, 1)));

    std::ifstream dj(io::descriptor_path(p));
    const auto desc = nlohmann::json::parse(dj);
    CHECK(desc["note"] == "hello");
    CHECK(desc["N"] == 7);
    CHECK(desc["modality"] == "image");

    const auto t = scratch("text.raw");
    const Dataset text(m, Modality::TextEmbedding, std::nullopt, 4);
    io::write_raw(t, text);
    const Dataset back = io::read_raw(t);
    CHECK(back == text);
    CHECK(back.seq_len() == 3);

    // grid geometry lives in the descriptor
    fs::remove(io::descriptor_path(p));
    CHECK_ERROR_KIND(io::read_raw(p), ErrorKind::Format);

    const auto cut = scratch("cut.raw");
    io::write_raw(cut, text);
    fs::resize_file(cut, fs::file_size(cut) - 3);
    CHECK_ERROR_KIND(io::read_raw(cut), ErrorKind::Length);

    const auto junk = scratch("junk.raw");
    write_text(junk, "NOPE0000000000000");
    CHECK_ERROR_KIND(io::read_raw(junk), ErrorKind::Format);
}
