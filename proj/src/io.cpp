#include "portmfg/io.hpp"
#include "portmfg/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unistd.h>

namespace fs = std::filesystem;

namespace pmfg {

static std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

static bool parse_number(const std::string& s, double& x) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+') ++b;
    auto res = std::from_chars(b, e, x);
    return res.ec == std::errc() && res.ptr == e && std::isfinite(x);
}

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

FlowLoad parse_flows(std::istream& in) {
    FlowLoad out;
    std::string line;
    long lineno = 0;
    if (!std::getline(in, line)) throw ParseError("missing header '" + std::string(kFlowHeader) + "'", 1);
    ++lineno;
    std::string header = trim(line);
    if (header.rfind("\xEF\xBB\xBF", 0) == 0) header = header.substr(3);
    if (header != kFlowHeader) throw ParseError("expected header '" + std::string(kFlowHeader) + "'", lineno);

    std::map<std::tuple<Day, std::string, std::string, std::string>, size_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) throw ParseError("expected 5 fields, found " + std::to_string(f.size()), lineno);
        Day d;
        try {
            d = parse_iso_date(f[0]);
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), lineno);
        }
        for (int k = 1; k <= 3; ++k)
            if (f[k].empty()) throw ParseError("empty origin, destination or good", lineno);
        double tons;
        if (!parse_number(f[4], tons)) throw ParseError("quantity '" + f[4] + "' is not a finite number", lineno);
        if (tons < 0) throw NegativeQuantity("negative tonnage " + f[4], lineno);
        ++out.rows;
        auto key = std::make_tuple(d, f[1], f[2], f[3]);
        auto it = seen.find(key);
        if (it != seen.end()) {
            out.series.records[it->second].tons += tons;
            ++out.merged_duplicates;
        } else {
            seen.emplace(key, out.series.records.size());
            out.series.records.push_back({d, f[1], f[2], f[3], tons});
        }
    }
    return out;
}

FlowLoad load_flows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open flow file " + path);
    return parse_flows(in);
}

std::string format_flows(const FlowSeries& series) {
    std::string s = std::string(kFlowHeader) + "\n";
    for (const auto& r : series.records)
        s += format_iso_date(r.date) + "," + r.origin + "," + r.destination + "," + r.good + "," + format_double(r.tons) + "\n";
    return s;
}

void write_flows(const std::string& path, const FlowSeries& series) {
    atomic_write(path, format_flows(series));
}

DistanceLoad parse_distances(std::istream& in, const std::vector<std::string>& want) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty distance file", 1);
    auto head = split_csv_line(line);
    if (head.size() < 2) throw ParseError("distance header needs a corner cell and at least one label", 1);
    std::vector<std::string> cols(head.begin() + 1, head.end());
    const int K = static_cast<int>(cols.size());

    std::vector<std::string> rows;
    MatrixXd raw(K, K);
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto f = split_csv_line(line);
        if (static_cast<int>(f.size()) != K + 1)
            throw ParseError("expected " + std::to_string(K + 1) + " fields", lineno);
        if (static_cast<int>(rows.size()) >= K) throw ParseError("more rows than header labels", lineno);
        const int r = static_cast<int>(rows.size());
        rows.push_back(f[0]);
        for (int k = 0; k < K; ++k) {
            double x;
            if (!parse_number(f[k + 1], x)) throw ParseError("entry '" + f[k + 1] + "' is not a finite number", lineno);
            if (x < 0) throw NegativeQuantity("negative travel cost " + f[k + 1], lineno);
            raw(r, k) = x;
        }
    }
    if (static_cast<int>(rows.size()) != K) throw ParseError("matrix is not square", lineno);

    auto diff = [](std::vector<std::string> a, std::vector<std::string> b, std::string& msg) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        std::vector<std::string> missing, extra;
        std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(missing));
        std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(extra));
        for (auto& m : missing) msg += " missing:" + m;
        for (auto& e : extra) msg += " extra:" + e;
        return missing.empty() && extra.empty();
    };
    std::string msg;
    if (!diff(cols, rows, msg) || std::set<std::string>(cols.begin(), cols.end()).size() != cols.size())
        throw LabelMismatch("row labels do not match column labels:" + msg);
    const std::vector<std::string> labels = want.empty() ? cols : want;
    msg.clear();
    if (!want.empty() && !diff(want, cols, msg)) throw LabelMismatch("distance labels differ from the network:" + msg);

    DistanceLoad out;
    out.labels = labels;
    out.matrix.resize(K, K);
    auto pos = [](const std::vector<std::string>& v, const std::string& s) {
        return static_cast<int>(std::find(v.begin(), v.end(), s) - v.begin());
    };
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) out.matrix(i, j) = raw(pos(rows, labels[i]), pos(cols, labels[j]));
    for (int i = 0; i < K; ++i)
        if (out.matrix(i, i) != 0) {
            out.warnings.push_back("nonzero diagonal at " + labels[i] + " coerced to 0");
            out.matrix(i, i) = 0;
            ++out.diagonal_coerced;
        }
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j)
            if (out.matrix(i, j) != out.matrix(j, i)) {
                out.warnings.push_back("asymmetric travel cost between " + labels[i] + " and " + labels[j]);
                ++out.asymmetric_pairs;
            }
    return out;
}

DistanceLoad load_distances(const std::string& path, const std::vector<std::string>& labels) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open distance file " + path);
    return parse_distances(in, labels);
}

std::string format_matrix(const std::vector<std::string>& labels, const MatrixXd& M) {
    std::string s = "port";
    for (const auto& l : labels) s += "," + l;
    s += "\n";
    for (int i = 0; i < M.rows(); ++i) {
        s += labels[i];
        for (int j = 0; j < M.cols(); ++j) s += "," + format_double(M(i, j));
        s += "\n";
    }
    return s;
}

void write_distances(const std::string& path, const std::vector<std::string>& labels, const MatrixXd& T) {
    atomic_write(path, format_matrix(labels, T));
}

void atomic_write(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInput("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw InvalidInput("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned k = 0; k < len; ++k) {
        out += hex[md[k] >> 4];
        out += hex[md[k] & 15];
    }
    return out;
}

std::string file_sha256(const std::string& path) { return sha256_hex(read_file(path)); }

}  // namespace pmfg
