#include "tflow/tntp.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "tflow/error.hpp"

namespace tflow {
namespace {

struct Line {
    std::string_view text;
    int number;
};

// Splits on \n, drops a trailing \r and everything after '~'.
std::vector<Line> split_lines(std::string_view text) {
    std::vector<Line> lines;
    int number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        ++number;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (auto tilde = line.find('~'); tilde != std::string_view::npos) line = line.substr(0, tilde);
        lines.push_back({line, number});
        if (end == text.size()) break;
        start = end + 1;
    }
    return lines;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> tokens(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::optional<double> to_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<long> to_int(std::string_view s) {
    s = trim(s);
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        // Some files write integral ids as "1.0".
        auto d = to_double(s);
        if (d && std::floor(*d) == *d) return static_cast<long>(*d);
        return std::nullopt;
    }
    return v;
}

// Reads `<KEY> value` lines up to <END OF METADATA>; returns index of the first body line.
std::size_t read_metadata(const std::vector<Line>& lines, std::map<std::string, std::pair<std::string, int>>& meta) {
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = trim(lines[i].text);
        if (line.empty()) continue;
        if (line.front() != '<') throw ParseError("expected a <METADATA> line, got '" + std::string(line) + "'", lines[i].number);
        const auto close = line.find('>');
        if (close == std::string_view::npos) throw ParseError("unterminated metadata tag", lines[i].number);
        const std::string key(trim(line.substr(1, close - 1)));
        if (key == "END OF METADATA") return i + 1;
        meta[key] = {std::string(trim(line.substr(close + 1))), lines[i].number};
    }
    throw ParseError("missing <END OF METADATA>", 0);
}

long required_int(const std::map<std::string, std::pair<std::string, int>>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParseError("missing <" + key + ">", 0);
    auto v = to_int(it->second.first);
    if (!v || *v < 0) throw ParseError("<" + key + "> is not a non-negative integer", it->second.second);
    return *v;
}

}  // namespace

Network parse_tntp_network(std::string_view text, const TntpNetworkOptions& options) {
    const auto lines = split_lines(text);
    std::map<std::string, std::pair<std::string, int>> meta;
    const std::size_t body = read_metadata(lines, meta);
    const long nodes = required_int(meta, "NUMBER OF NODES");
    const long links = required_int(meta, "NUMBER OF LINKS");
    long first_thru = 1;
    if (meta.count("FIRST THRU NODE")) first_thru = required_int(meta, "FIRST THRU NODE");

    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(links));
    for (std::size_t i = body; i < lines.size(); ++i) {
        auto line = trim(lines[i].text);
        if (auto semi = line.find(';'); semi != std::string_view::npos) line = trim(line.substr(0, semi));
        if (line.empty()) continue;
        const auto tok = tokens(line);
        const int ln = lines[i].number;
        if (tok.size() < 7) throw ParseError("link row needs at least 7 fields", ln);
        std::vector<double> v;
        for (auto t : tok) {
            auto d = to_double(t);
            if (!d) throw ParseError("non-numeric field '" + std::string(t) + "'", ln);
            v.push_back(*d);
        }
        auto from = to_int(tok[0]);
        auto to = to_int(tok[1]);
        if (!from || !to) throw ParseError("node ids must be integers", ln);
        if (*from < 1 || *from > nodes || *to < 1 || *to > nodes)
            throw StructuralError("line " + std::to_string(ln) + ": node id outside [1, " + std::to_string(nodes) + "]");
        Edge e;
        e.tail = static_cast<int>(*from - 1);
        e.head = static_cast<int>(*to - 1);
        e.capacity = v[2];
        e.length = v[3];
        e.free_flow_time = v[4];
        e.zeta = v[5];
        const double power = v[6];
        e.speed = v.size() > 7 ? v[7] : 0.0;
        const std::string name = "edge " + std::to_string(edges.size() + 1) + " (" + std::to_string(*from) + "->" +
                                 std::to_string(*to) + ", line " + std::to_string(ln) + ")";
        if (!(e.capacity > 0.0)) throw DataError(name + ": non-positive capacity " + std::to_string(e.capacity));
        if (!(power > 0.0)) throw DataError(name + ": non-positive power " + std::to_string(power));
        e.mu = 1.0 / power;
        if (e.free_flow_time == 0.0)
            e.free_flow_time = (e.length > 0.0 && e.speed > 0.0) ? e.length / e.speed : options.epsilon_time;
        if (!(e.free_flow_time > 0.0)) throw DataError(name + ": negative free-flow time");
        edges.push_back(e);
    }
    if (static_cast<long>(edges.size()) != links)
        throw StructuralError("declared " + std::to_string(links) + " links, found " + std::to_string(edges.size()));
    return Network(static_cast<int>(nodes), std::move(edges), static_cast<int>(first_thru - 1));
}

double TripTable::total() const {
    double s = 0.0;
    for (const auto& [_, v] : entries) s += v;
    return s;
}

TripTable parse_tntp_trips(std::string_view text) {
    const auto lines = split_lines(text);
    std::map<std::string, std::pair<std::string, int>> meta;
    const std::size_t body = read_metadata(lines, meta);
    TripTable table;
    table.zone_count = static_cast<int>(required_int(meta, "NUMBER OF ZONES"));
    if (auto it = meta.find("TOTAL OD FLOW"); it != meta.end()) {
        auto v = to_double(it->second.first);
        if (!v) throw ParseError("<TOTAL OD FLOW> is not a number", it->second.second);
        table.declared_total = *v;
    }

    long origin = -1;
    for (std::size_t i = body; i < lines.size(); ++i) {
        const auto line = trim(lines[i].text);
        const int ln = lines[i].number;
        if (line.empty()) continue;
        if (line.rfind("Origin", 0) == 0) {
            auto id = to_int(line.substr(6));
            if (!id) throw ParseError("malformed Origin line", ln);
            if (*id < 1 || *id > table.zone_count)
                throw StructuralError("line " + std::to_string(ln) + ": Origin " + std::to_string(*id) +
                                      " is not a declared zone");
            origin = *id;
            continue;
        }
        if (origin < 0) throw ParseError("demand entry before any Origin line", ln);
        std::string_view rest = line;
        while (!rest.empty()) {
            const auto semi = rest.find(';');
            const auto entry = trim(rest.substr(0, semi));
            rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
            if (entry.empty()) continue;
            const auto colon = entry.find(':');
            if (colon == std::string_view::npos) throw ParseError("expected 'destination : value'", ln);
            auto dest = to_int(entry.substr(0, colon));
            auto value = to_double(entry.substr(colon + 1));
            if (!dest || !value) throw ParseError("malformed demand entry '" + std::string(entry) + "'", ln);
            if (*dest < 1 || *dest > table.zone_count)
                throw StructuralError("line " + std::to_string(ln) + ": destination " + std::to_string(*dest) +
                                      " is not a declared zone");
            if (*value < 0.0)
                throw DataError("line " + std::to_string(ln) + ": negative demand " + std::to_string(*value) +
                                " for " + std::to_string(origin) + "->" + std::to_string(*dest));
            if (*value > 0.0) table.entries[{static_cast<int>(origin - 1), static_cast<int>(*dest - 1)}] += *value;
        }
    }
    const double total = table.total();
    if (meta.count("TOTAL OD FLOW") &&
        std::abs(total - table.declared_total) > 1e-6 * std::max(std::abs(table.declared_total), 1e-300)) {
        std::ostringstream os;
        os.precision(17);
        os << "total OD flow " << total << " differs from declared " << table.declared_total;
        table.warnings.push_back(os.str());
    }
    return table;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace tflow
