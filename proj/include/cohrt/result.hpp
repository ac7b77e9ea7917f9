#pragma once

#include <stdexcept>
#include <utility>
#include <variant>

namespace cohrt {

/// Value-or-error return for outcomes callers are expected to branch on.
/// Stand-in for std::expected until the toolchain moves to C++23.
template <typename T, typename E>
class result {
public:
    result(T value) : storage_(std::in_place_index<0>, std::move(value)) {}
    result(E error) : storage_(std::in_place_index<1>, std::move(error)) {}

    bool has_value() const { return storage_.index() == 0; }
    explicit operator bool() const { return has_value(); }

    T& value() & { return checked_value(); }
    const T& value() const& { return const_cast<result*>(this)->checked_value(); }
    T&& value() && { return std::move(checked_value()); }

    const E& error() const {
        if (has_value()) {
            throw std::logic_error("result holds a value, not an error");
        }
        return std::get<1>(storage_);
    }

    T* operator->() { return &value(); }
    const T* operator->() const { return &value(); }
    T& operator*() & { return value(); }
    const T& operator*() const& { return value(); }

private:
    T& checked_value() {
        if (!has_value()) {
            throw std::logic_error("result holds an error, not a value");
        }
        return std::get<0>(storage_);
    }

    std::variant<T, E> storage_;
};

} // namespace cohrt
