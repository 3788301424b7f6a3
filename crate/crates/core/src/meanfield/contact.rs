use crate::mobility::ContactModel;

/// Number of whole transfers of length `transfer_time` that fit in a contact
/// of length `t_c` after setup.
fn whole_transfers(t_c: f64, transfer_time: f64, t0: f64) -> f64 {
    if t_c < t0 {
        return 0.0;
    }
    let x = (t_c - t0) / transfer_time;
    // Guard exact multiples against rounding just below an integer.
    (x * (1.0 + 1e-12)).floor()
}

/// Prefix sums over the duration histogram that turn `S(γ)` and `T_S(γ)`
/// into two binary searches.
#[derive(Debug, Clone)]
pub(crate) struct ContactQuadrature {
    midpoints: Vec<f64>,
    fits: Vec<f64>,
    /// Prefix sums of mass, mass·t_c and mass·fits; one longer than the bins.
    mass: Vec<f64>,
    mass_t: Vec<f64>,
    mass_fits: Vec<f64>,
    transfer_time: f64,
    t0: f64,
}

impl ContactQuadrature {
    pub fn new(cm: &ContactModel, transfer_time: f64, t0: f64) -> Self {
        let mut bins: Vec<(f64, f64)> = cm
            .duration_hist
            .iter()
            .map(|b| (b.midpoint(), b.mass))
            .collect();
        bins.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut q = ContactQuadrature {
            midpoints: Vec::with_capacity(bins.len()),
            fits: Vec::with_capacity(bins.len()),
            mass: vec![0.0],
            mass_t: vec![0.0],
            mass_fits: vec![0.0],
            transfer_time,
            t0,
        };
        for (t_c, m) in bins {
            let fits = whole_transfers(t_c, transfer_time, t0);
            q.midpoints.push(t_c);
            q.fits.push(fits);
            q.mass.push(q.mass.last().unwrap() + m);
            q.mass_t.push(q.mass_t.last().unwrap() + m * t_c);
            q.mass_fits.push(q.mass_fits.last().unwrap() + m * fits);
        }
        q
    }

    /// `(S, T_S)` for `gamma` exchangeable instances.
    pub fn eval(&self, gamma: f64) -> (f64, f64) {
        let gamma = gamma.max(0.0);
        let total = *self.mass.last().unwrap();
        let (success, rest) = if gamma > 0.0 {
            // Bins that fit fewer than γ transfers contribute fits/γ, the rest 1.
            let j = self.fits.partition_point(|&f| f < gamma);
            (self.mass_fits[j] / gamma, total - self.mass[j])
        } else {
            let j = self.fits.partition_point(|&f| f < 1.0);
            (0.0, total - self.mass[j])
        };
        let cap = gamma * self.transfer_time + self.t0;
        let i = self.midpoints.partition_point(|&t| t <= cap);
        let exchange = self.mass_t[i] + cap * (total - self.mass[i]);
        (success + rest, exchange)
    }
}

/// Single-transfer success probability `S` and mean exchange duration `T_S`
/// for `gamma` exchangeable instances, by bin-midpoint quadrature over the
/// contact-duration histogram:
/// `S = Σ mass·min(1, floor((t_c - t0)/T_L)/γ)`, `T_S = Σ mass·min(t_c, γT_L + t0)`.
///
/// `gamma = 0` is taken as the limit `gamma -> 0+`.
pub fn contact_integrals(gamma: f64, cm: &ContactModel, transfer_time: f64, t0: f64) -> (f64, f64) {
    ContactQuadrature::new(cm, transfer_time, t0).eval(gamma)
}
