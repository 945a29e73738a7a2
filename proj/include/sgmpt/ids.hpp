#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>

namespace sgmpt {

// Dense index wrapped in a tag type so entity, relation and token ids cannot
// be mixed up.
template <typename Tag>
struct Id {
  std::uint32_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint32_t v) : value(v) {}
  constexpr explicit Id(std::size_t v) : value(static_cast<std::uint32_t>(v)) {}
  constexpr explicit Id(int v) : value(static_cast<std::uint32_t>(v)) {}

  constexpr std::size_t index() const { return value; }
  friend constexpr auto operator<=>(Id, Id) = default;
};

struct EntityTag {};
struct RelationTag {};
struct TokenTag {};

using EntityId = Id<EntityTag>;
using RelationId = Id<RelationTag>;
using TokenId = Id<TokenTag>;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;

  friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

}  // namespace sgmpt

template <typename Tag>
struct std::hash<sgmpt::Id<Tag>> {
  std::size_t operator()(sgmpt::Id<Tag> id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

template <>
struct std::hash<sgmpt::Triple> {
  std::size_t operator()(const sgmpt::Triple& t) const noexcept {
    std::uint64_t k = (static_cast<std::uint64_t>(t.head.value) << 40) ^
                      (static_cast<std::uint64_t>(t.relation.value) << 20) ^ t.tail.value;
    return std::hash<std::uint64_t>{}(k);
  }
};
