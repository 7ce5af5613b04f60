#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trepair/schema.hpp"

namespace trepair {

/// A stored record's position in the global domain: predicate-major, then key.
struct PointKey {
  PredId pred = 0;
  Tuple key;

  bool operator==(const PointKey& o) const { return pred == o.pred && key == o.key; }
};

inline int cmp(const PointKey& a, const PointKey& b) {
  if (a.pred != b.pred) return a.pred < b.pred ? -1 : 1;
  return cmp(a.key, b.key);
}

struct PointKeyLess {
  bool operator()(const PointKey& a, const PointKey& b) const { return cmp(a, b) < 0; }
};

inline std::string to_string(const PointKey& k) {
  return std::to_string(k.pred) + ":" + to_string(k.key);
}

/// Element of the global domain D: -inf, +inf, or (pred, key).
struct DomainPoint {
  enum class Kind : std::uint8_t { NegInf, Point, PosInf };
  Kind kind = Kind::NegInf;
  PredId pred = 0;
  Tuple key;

  static DomainPoint neg_inf() { return {Kind::NegInf, 0, {}}; }
  static DomainPoint pos_inf() { return {Kind::PosInf, 0, {}}; }
  static DomainPoint at(PredId p, Tuple k) { return {Kind::Point, p, std::move(k)}; }
  static DomainPoint at(const PointKey& k) { return at(k.pred, k.key); }

  bool is_point() const { return kind == Kind::Point; }
  bool operator==(const DomainPoint& o) const { return cmp_domain(*this, o) == 0; }

  friend int cmp_domain(const DomainPoint& x, const DomainPoint& y) {
    if (x.kind != y.kind && (x.kind != Kind::Point || y.kind != Kind::Point)) {
      auto rank = [](Kind k) { return k == Kind::NegInf ? 0 : k == Kind::Point ? 1 : 2; };
      return rank(x.kind) < rank(y.kind) ? -1 : 1;
    }
    if (x.kind != Kind::Point) return 0;
    if (x.pred != y.pred) return x.pred < y.pred ? -1 : 1;
    return cmp(x.key, y.key);
  }
};

/// Point record vs domain point.
inline int cmp(const PointKey& k, const DomainPoint& p) {
  return cmp_domain(DomainPoint::at(k.pred, k.key), p);
}

inline std::string to_string(const DomainPoint& p) {
  switch (p.kind) {
    case DomainPoint::Kind::NegInf: return "-inf";
    case DomainPoint::Kind::PosInf: return "+inf";
    default: return std::to_string(p.pred) + ":" + to_string(p.key);
  }
}

/// Half-open interval [lo, hi) of D.
struct DomainInterval {
  DomainPoint lo, hi;

  bool contains(const PointKey& k) const { return cmp(k, lo) >= 0 && cmp(k, hi) < 0; }
  bool contains(const DomainPoint& p) const { return cmp_domain(p, lo) >= 0 && cmp_domain(p, hi) < 0; }
  bool empty() const { return cmp_domain(lo, hi) >= 0; }
};

/// Subdomain labels are strings over {0,1}; "" is the whole domain.
using Label = std::string;

inline void check_label(const Label& d) {
  for (char c : d) {
    if (c != '0' && c != '1') throw std::invalid_argument("invalid subdomain label '" + d + "'");
  }
}

/// Complete binary tree of split points of a fixed height, stored heap-style
/// (root at index 1, children of i at 2i and 2i+1).
class DomainDecomposition {
 public:
  DomainDecomposition() = default;
  DomainDecomposition(int height, std::vector<DomainPoint> heap_splits)
      : height_(height), splits_(std::move(heap_splits)) {
    if (height_ < 0) throw std::invalid_argument("decomposition height must be >= 0");
    if (splits_.size() != (std::size_t{1} << height_)) {
      throw std::invalid_argument("decomposition needs 2^height heap slots");
    }
    for (std::size_t i = 1; i < splits_.size(); ++i) {
      if (!splits_[i].is_point()) throw std::invalid_argument("split points must not be infinite");
    }
  }

  int height() const { return height_; }

  /// Split point of the node at path d (|d| < height).
  const DomainPoint& split(const Label& d) const {
    check_label(d);
    if (static_cast<int>(d.size()) >= height_) {
      throw std::invalid_argument("no split at depth " + std::to_string(d.size()));
    }
    return splits_[index(d)];
  }

  DomainInterval subdomain_interval(const Label& d) const {
    check_label(d);
    if (static_cast<int>(d.size()) > height_) {
      throw std::invalid_argument("label '" + d + "' deeper than decomposition");
    }
    DomainInterval iv{DomainPoint::neg_inf(), DomainPoint::pos_inf()};
    for (std::size_t i = 0; i < d.size(); ++i) {
      const DomainPoint& s = splits_[index(d.substr(0, i))];
      if (d[i] == '0') iv.hi = s;
      else iv.lo = s;
    }
    return iv;
  }

  /// Label of the depth-`depth` subdomain containing k.
  Label locate(const PointKey& k, int depth) const {
    Label d;
    for (int i = 0; i < depth; ++i) d.push_back(cmp(k, splits_[index(d)]) < 0 ? '0' : '1');
    return d;
  }

  /// Splits chosen as sample medians, recursively, so leaves carry roughly
  /// equal sample mass. Empty sample ranges reuse the nearest finite
  /// endpoint, which yields empty subdomains.
  static DomainDecomposition build(std::vector<DomainPoint> samples, int height) {
    if (height < 0) throw std::invalid_argument("decomposition height must be >= 0");
    samples.erase(std::remove_if(samples.begin(), samples.end(),
                                 [](const DomainPoint& p) { return !p.is_point(); }),
                  samples.end());
    std::sort(samples.begin(), samples.end(),
              [](const DomainPoint& a, const DomainPoint& b) { return cmp_domain(a, b) < 0; });
    std::vector<DomainPoint> heap(std::size_t{1} << height, DomainPoint::neg_inf());
    fill(heap, samples, 1, 0, samples.size(), DomainPoint::neg_inf(), DomainPoint::pos_inf(), height);
    return DomainDecomposition(height, std::move(heap));
  }

  nlohmann::json to_json() const {
    nlohmann::json splits = nlohmann::json::array();
    for (std::size_t i = 1; i < splits_.size(); ++i) {
      splits.push_back({{"pred", splits_[i].pred}, {"key", tuple_to_json(splits_[i].key)}});
    }
    return {{"height", height_}, {"splits", splits}};
  }

  static DomainDecomposition from_json(const nlohmann::json& j) {
    int h = j.at("height").get<int>();
    std::vector<DomainPoint> heap(std::size_t{1} << h, DomainPoint::neg_inf());
    const auto& s = j.at("splits");
    if (s.size() + 1 != heap.size()) throw std::invalid_argument("split count does not match height");
    for (std::size_t i = 0; i < s.size(); ++i) {
      heap[i + 1] = DomainPoint::at(s[i].at("pred").get<PredId>(), tuple_from_json(s[i].at("key")));
    }
    return DomainDecomposition(h, std::move(heap));
  }

 private:
  static std::size_t index(const Label& d) {
    std::size_t i = 1;
    for (char c : d) i = 2 * i + (c == '1' ? 1 : 0);
    return i;
  }

  static void fill(std::vector<DomainPoint>& heap, const std::vector<DomainPoint>& s, std::size_t node,
                   std::size_t lo, std::size_t hi, const DomainPoint& a, const DomainPoint& b, int levels) {
    if (levels == 0) return;
    DomainPoint split;
    if (lo < hi) split = s[lo + (hi - lo) / 2];
    else if (a.is_point()) split = a;
    else if (b.is_point()) split = b;
    else split = DomainPoint::at(0, {});
    heap[node] = split;
    auto mid = static_cast<std::size_t>(
        std::lower_bound(s.begin() + static_cast<std::ptrdiff_t>(lo), s.begin() + static_cast<std::ptrdiff_t>(hi),
                         split, [](const DomainPoint& x, const DomainPoint& y) { return cmp_domain(x, y) < 0; }) -
        s.begin());
    fill(heap, s, 2 * node, lo, mid, a, split, levels - 1);
    fill(heap, s, 2 * node + 1, mid, hi, split, b, levels - 1);
  }

  int height_ = 0;
  std::vector<DomainPoint> splits_{DomainPoint::neg_inf()};
};

}  // namespace trepair
