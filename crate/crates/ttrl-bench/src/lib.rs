//! Shared benchmark fixtures live in the bench targets themselves.
