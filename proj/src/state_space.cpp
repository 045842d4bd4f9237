#include "qsdlab/state_space.hpp"

#include <algorithm>

namespace qsdlab {

std::shared_ptr<const StateSpace> StateSpace::with_size(std::size_t n) {
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = std::to_string(i);
    return from_labels(std::move(labels));
}

std::shared_ptr<const StateSpace> StateSpace::from_labels(std::vector<std::string> labels) {
    auto sp = std::shared_ptr<StateSpace>(new StateSpace());
    sp->labels_ = std::move(labels);
    sp->index_.reserve(sp->labels_.size());
    for (std::size_t i = 0; i < sp->labels_.size(); ++i) {
        auto [it, inserted] = sp->index_.emplace(sp->labels_[i], i);
        if (!inserted) throw Precondition("duplicate state label '" + sp->labels_[i] + "'");
    }
    return sp;
}

void StateSpace::set_coordinates(std::vector<std::vector<double>> coords) {
    if (coords.size() != labels_.size())
        throw DimensionMismatch(coords.size(), labels_.size(), "state coordinates");
    coords_ = std::move(coords);
}

StateSet::StateSet(std::vector<std::size_t> indices, std::size_t space_size) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    mask_.assign(space_size, false);
    for (std::size_t i : indices) {
        if (i >= space_size)
            throw Precondition("state index " + std::to_string(i) + " outside space of size " +
                               std::to_string(space_size));
        mask_[i] = true;
    }
    indices_ = std::move(indices);
}

StateSet StateSet::all(std::size_t space_size) {
    std::vector<std::size_t> idx(space_size);
    for (std::size_t i = 0; i < space_size; ++i) idx[i] = i;
    return StateSet(std::move(idx), space_size);
}

StateSet StateSet::from_mask(const std::vector<bool>& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    return StateSet(std::move(idx), mask.size());
}

StateSet StateSet::complement() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask_.size(); ++i)
        if (!mask_[i]) idx.push_back(i);
    return StateSet(std::move(idx), mask_.size());
}

}  // namespace qsdlab
