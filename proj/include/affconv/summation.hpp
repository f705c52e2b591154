#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>

namespace affconv {

// Sums a multiset of terms in ascending value order. The result depends only on
// the multiset, so neighbourhood aggregation is bit-identical under vertex
// relabelling. Reorders `terms` in place.
template <typename T>
T canonical_sum(std::span<T> terms) {
  if (terms.size() == 1) return terms[0];
  if (terms.size() == 2) return terms[0] < terms[1] ? terms[0] + terms[1] : terms[1] + terms[0];
  if (terms.size() <= 16) {
    for (std::size_t i = 1; i < terms.size(); ++i) {
      const T v = terms[i];
      std::size_t j = i;
      for (; j > 0 && v < terms[j - 1]; --j) terms[j] = terms[j - 1];
      terms[j] = v;
    }
  } else {
    std::sort(terms.begin(), terms.end());
  }
  T acc = T(0);
  for (T v : terms) acc += v;
  return acc;
}


// IEEE total order key: sorts -0 before +0 and places NaNs at the ends, so it
// is a strict weak order on every input.
template <typename T>
auto total_order_key(T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(v);
  constexpr U sign = U(1) << (sizeof(U) * 8 - 1);
  return (bits & sign) ? ~bits : (bits | sign);
}

template <typename T>
bool lex_less(const T* a, const T* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const auto ka = total_order_key(a[i]), kb = total_order_key(b[i]);
    if (ka != kb) return ka < kb;
  }
  return false;
}

// Sorts `items` by the data they carry; `less` must compare values only, never
// the item ids. Sums taken in the resulting order depend only on the multiset
// of carried data, like canonical_sum, but one sort serves every channel.
template <typename Less>
void canonical_order(std::span<std::size_t> items, Less less) {
  if (items.size() <= 16) {
    for (std::size_t i = 1; i < items.size(); ++i) {
      const std::size_t v = items[i];
      std::size_t j = i;
      for (; j > 0 && less(v, items[j - 1]); --j) items[j] = items[j - 1];
      items[j] = v;
    }
  } else {
    std::sort(items.begin(), items.end(), less);
  }
}

}  // namespace affconv
