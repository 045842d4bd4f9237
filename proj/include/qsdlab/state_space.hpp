#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qsdlab/errors.hpp"

namespace qsdlab {

/// Finite indexed state space. The cemetery is implicit: it is never a member,
/// absorption shows up as row mass deficit in the kernels living on the space.
class StateSpace {
public:
    static std::shared_ptr<const StateSpace> with_size(std::size_t n);
    static std::shared_ptr<const StateSpace> from_labels(std::vector<std::string> labels);

    std::size_t size() const { return labels_.size(); }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::string>& labels() const { return labels_; }

    std::optional<std::size_t> index_of(const std::string& label) const {
        auto it = index_.find(label);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Optional per-state coordinates (set by model builders for gridded spaces).
    void set_coordinates(std::vector<std::vector<double>> coords);
    bool has_coordinates() const { return !coords_.empty(); }
    const std::vector<double>& coordinates(std::size_t i) const { return coords_.at(i); }
    const std::vector<std::vector<double>>& all_coordinates() const { return coords_; }

private:
    StateSpace() = default;
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<double>> coords_;
};

using StateSpacePtr = std::shared_ptr<const StateSpace>;

/// Subset of a state space, kept as a sorted index list plus a membership mask.
class StateSet {
public:
    StateSet() = default;
    StateSet(std::vector<std::size_t> indices, std::size_t space_size);

    static StateSet all(std::size_t space_size);
    static StateSet from_mask(const std::vector<bool>& mask);

    bool contains(std::size_t i) const { return i < mask_.size() && mask_[i]; }
    const std::vector<std::size_t>& indices() const { return indices_; }
    const std::vector<bool>& mask() const { return mask_; }
    std::size_t size() const { return indices_.size(); }
    bool empty() const { return indices_.empty(); }
    std::size_t space_size() const { return mask_.size(); }

    /// Complement within the host space.
    StateSet complement() const;

    bool operator==(const StateSet& other) const {
        return mask_ == other.mask_;
    }

private:
    std::vector<std::size_t> indices_;
    std::vector<bool> mask_;
};

}  // namespace qsdlab
