//! Shared fixtures for the benchmarks in `benches/`.

use fg_core::{ContactModel, SystemParams};

/// Default configuration with the kinematic contact model applied.
pub fn fixture() -> (SystemParams, ContactModel) {
    let params = SystemParams::default()
        .validate()
        .expect("defaults validate");
    let cm = ContactModel::kinematic_fallback(&params);
    let params = cm.apply_to(&params).expect("contact model applies");
    (params, cm)
}
