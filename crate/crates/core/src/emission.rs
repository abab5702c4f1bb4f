//! Emission scores from similarity to per-label representations.
//!
//! For an episode every label `j` gets
//!
//! * a reference `phi_j`, a row of the shared learnable [`ReferencePool`],
//! * a prototype `c_j`, the mean support-token vector carrying label `j`,
//! * a label-enhanced reference `psi_j = (1 - alpha) phi_j + alpha s_j`, with
//!   `s_j` the label-name vector,
//! * a representation `Omega_j = (1 - beta) c_j + beta psi_j`.
//!
//! The projected scorers build `M` whose columns span the orthogonal
//! complement of the per-label errors between normalized, mean-subtracted
//! `psi` and normalized `c`, then score a token by the dot product of
//! `M^T x` and `M^T Omega_j`. The prototype-only scorers skip the projection
//! and use negative squared distance. Each row is log-softmax normalized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Relative cutoff under which a singular value counts as zero.
pub const SINGULAR_CUTOFF: f64 = 1e-9;
/// Norm under which a prototype or reference is treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Learnable reference vectors shared across domains, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool<T: Scalar> {
    pub refs: DMatrix<T>,
}

impl<T: Scalar> ReferencePool<T> {
    pub fn new(refs: DMatrix<T>) -> Self {
        ReferencePool { refs }
    }

    /// Rows drawn from a Gaussian and scaled to unit length.
    pub fn random(n_pool: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut refs = DMatrix::<f64>::from_fn(n_pool, dim, |_, _| StandardNormal.sample(&mut rng));
        for mut row in refs.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        ReferencePool {
            refs: refs.map(T::of),
        }
    }

    pub fn len(&self) -> usize {
        self.refs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.refs.ncols()
    }

    /// Reference rows stacked in label order.
    pub fn gather(&self, assignment: &[usize]) -> DMatrix<T> {
        self.refs.select_rows(assignment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    /// Labels to a random injective choice of rows, as during training.
    Random(u64),
    /// Label `j` to row `j`.
    Deterministic,
}

/// Injective map from label id to pool row.
pub fn assign_references(n_pool: usize, n_labels: usize, mode: AssignMode) -> Result<Vec<usize>> {
    if n_pool < n_labels {
        return Err(Error::PoolTooSmall {
            pool: n_pool,
            needed: n_labels,
        });
    }
    Ok(match mode {
        AssignMode::Deterministic => (0..n_labels).collect(),
        AssignMode::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, n_pool, n_labels).into_vec()
        }
    })
}

/// Per-label mean of support token vectors; labels without support tokens are absent.
pub fn compute_prototypes<T: Scalar>(
    support: &[DMatrix<T>],
    labels: &[Vec<usize>],
    n_labels: usize,
    dim: usize,
) -> (DMatrix<T>, Vec<bool>) {
    let mut sums = DMatrix::zeros(n_labels, dim);
    let mut counts = vec![0usize; n_labels];
    for (emb, ys) in support.iter().zip(labels) {
        for (t, &y) in ys.iter().enumerate() {
            let mut row = sums.row_mut(y);
            row += emb.row(t);
            counts[y] += 1;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            let mut row = sums.row_mut(j);
            row /= T::of(c as f64);
        }
    }
    (sums, counts.iter().map(|&c| c > 0).collect())
}

/// Row-wise `(1 - alpha) phi + alpha s`.
pub fn enhanced_references<T: Scalar>(phi: &DMatrix<T>, semantics: &DMatrix<T>, alpha: T) -> DMatrix<T> {
    phi * (T::one() - alpha) + semantics * alpha
}

/// Row-wise `(1 - beta) c + beta psi`, falling back to `psi` for absent prototypes.
pub fn label_representations<T: Scalar>(
    prototypes: &DMatrix<T>,
    present: &[bool],
    psi: &DMatrix<T>,
    beta: T,
) -> DMatrix<T> {
    let mut omega = psi.clone();
    for (j, &p) in present.iter().enumerate() {
        if p {
            let row = prototypes.row(j) * (T::one() - beta) + psi.row(j) * beta;
            omega.set_row(j, &row);
        }
    }
    omega
}

/// Normalized alignment errors `psi~_k/|psi~_k| - c_k/|c_k|` of the present labels, one per row.
pub fn alignment_errors<T: Scalar>(psi: &DMatrix<T>, prototypes: &DMatrix<T>, present: &[bool]) -> Result<DMatrix<T>> {
    let ids: Vec<usize> = (0..present.len()).filter(|&j| present[j]).collect();
    let n = ids.len();
    if n == 0 {
        return Err(Error::Degenerate("no label has support tokens".into()));
    }
    let dim = psi.ncols();
    let total = ids
        .iter()
        .fold(DVector::<T>::zeros(dim).transpose(), |acc, &j| acc + psi.row(j));
    let mut errors = DMatrix::zeros(n, dim);
    for (k, &j) in ids.iter().enumerate() {
        let own = psi.row(j).into_owned();
        let centred = if n > 1 {
            &own - (&total - &own) / T::of((n - 1) as f64)
        } else {
            own
        };
        let (pn, cn) = (centred.norm(), prototypes.row(j).norm());
        if pn.as_f64() < DEGENERATE_NORM || cn.as_f64() < DEGENERATE_NORM {
            return Err(Error::Degenerate(format!(
                "label {j}: reference norm {:e}, prototype norm {:e}",
                pn, cn
            )));
        }
        errors.set_row(k, &(centred / pn - prototypes.row(j) / cn));
    }
    Ok(errors)
}

/// Orthonormal basis (as columns) of the complement of the span of the alignment errors.
///
/// Returns a `D x d_proj` matrix `M` with `errors * M = 0` and `M^T M = I`.
/// `d_proj` defaults to `D - L'` for `L'` present labels.
pub fn error_nulling_projection<T: Scalar>(
    psi: &DMatrix<T>,
    prototypes: &DMatrix<T>,
    present: &[bool],
    d_proj: Option<usize>,
) -> Result<DMatrix<T>> {
    let errors = alignment_errors(psi, prototypes, present)?;
    let (n, dim) = errors.shape();
    if n >= dim {
        return Err(Error::Degenerate(format!(
            "{n} labels with prototypes need embedding dimension above {n}, got {dim}"
        )));
    }
    null_space(&errors, d_proj.unwrap_or(dim - n))
}

/// `cols` orthonormal vectors orthogonal to every row of `rows`, taken in order of
/// increasing singular value.
pub fn null_space<T: Scalar>(rows: &DMatrix<T>, cols: usize) -> Result<DMatrix<T>> {
    let (n, dim) = rows.shape();
    // Pad to square so the decomposition returns a full set of right singular vectors.
    let mut square = DMatrix::zeros(dim, dim);
    square.view_mut((0, 0), (n.min(dim), dim)).copy_from(&rows.rows(0, n.min(dim)));
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sigma = svd.singular_values;
    let largest = sigma.iter().fold(T::zero(), |a, &s| if s > a { s } else { a });
    let cutoff = largest * T::of(SINGULAR_CUTOFF);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        sigma[a]
            .partial_cmp(&sigma[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let available = sigma.iter().filter(|&&s| s <= cutoff).count();
    if cols > available {
        return Err(Error::ProjectionTooLarge {
            requested: cols,
            available,
        });
    }
    let mut m = DMatrix::zeros(dim, cols);
    for (c, &i) in order.iter().take(cols).enumerate() {
        m.set_column(c, &v_t.row(i).transpose());
    }
    Ok(m)
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<T: Scalar>(logits: &DMatrix<T>) -> DMatrix<T> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let lse = log_sum_exp(row.iter().copied().collect::<Vec<_>>());
        row.add_scalar_mut(-lse);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "wpz")]
    Wpz,
    #[serde(rename = "l-wpz")]
    LWpz,
    #[serde(rename = "tapnet")]
    TapNet,
    #[serde(rename = "l-tapnet")]
    LTapNet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Wpz, Variant::LWpz, Variant::TapNet, Variant::LTapNet];

    pub fn projected(self) -> bool {
        matches!(self, Variant::TapNet | Variant::LTapNet)
    }

    pub fn uses_label_semantics(self) -> bool {
        matches!(self, Variant::LWpz | Variant::LTapNet)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Wpz => "wpz",
            Variant::LWpz => "l-wpz",
            Variant::TapNet => "tapnet",
            Variant::LTapNet => "l-tapnet",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wpz" => Ok(Variant::Wpz),
            "l-wpz" | "lwpz" => Ok(Variant::LWpz),
            "tapnet" => Ok(Variant::TapNet),
            "l-tapnet" | "ltapnet" => Ok(Variant::LTapNet),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Components that can be switched off one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Embed query and support sentences independently.
    Pairwise,
    /// Drop label-name vectors (`alpha = 0`).
    LabelSemantic,
    /// Drop prototypes from the label representation (`beta = 1`).
    Prototype,
    /// Drop transitions: emission-only training and greedy decoding.
    Cdt,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pairwise" | "pair-wise" => Ok(Ablation::Pairwise),
            "label-semantic" | "label-semantics" => Ok(Ablation::LabelSemantic),
            "prototype" => Ok(Ablation::Prototype),
            "cdt" | "dependency-transfer" => Ok(Ablation::Cdt),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

/// Resolved emission configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub d_proj: Option<usize>,
    pub pairwise: bool,
    pub transitions: bool,
}

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.7;

impl Default for ScorerConfig {
    fn default() -> Self {
        build_scorer(Variant::LTapNet, &[]).expect("defaults are consistent")
    }
}

/// Variant defaults with ablations applied.
///
/// | variant  | alpha | beta | projection |
/// |----------|-------|------|------------|
/// | wpz      | 0     | 0    | no         |
/// | l-wpz    | 0.5   | 0.7  | no         |
/// | tapnet   | 0     | 1    | yes        |
/// | l-tapnet | 0.5   | 0.7  | yes        |
pub fn build_scorer(variant: Variant, ablations: &[Ablation]) -> Result<ScorerConfig> {
    let (alpha, beta) = match variant {
        Variant::Wpz => (0.0, 0.0),
        Variant::TapNet => (0.0, 1.0),
        Variant::LWpz | Variant::LTapNet => (DEFAULT_ALPHA, DEFAULT_BETA),
    };
    let mut cfg = ScorerConfig {
        variant,
        alpha,
        beta,
        d_proj: None,
        pairwise: true,
        transitions: true,
    };
    for (i, &a) in ablations.iter().enumerate() {
        if ablations[..i].contains(&a) {
            return Err(Error::Config(format!("ablation {a:?} given twice")));
        }
        match a {
            Ablation::Pairwise => cfg.pairwise = false,
            Ablation::Cdt => cfg.transitions = false,
            Ablation::LabelSemantic => {
                if !variant.uses_label_semantics() {
                    return Err(Error::Config(format!("{variant} has no label semantics to ablate")));
                }
                cfg.alpha = 0.0;
            }
            Ablation::Prototype => {
                if variant != Variant::LWpz && variant != Variant::LTapNet {
                    return Err(Error::Config(format!(
                        "{variant} has no prototype reference to ablate"
                    )));
                }
                cfg.beta = 1.0;
            }
        }
    }
    Ok(cfg)
}

impl ScorerConfig {
    /// Overrides the balance factors, rejecting values outside `[0, 1]`.
    pub fn with_factors(mut self, alpha: Option<f64>, beta: Option<f64>) -> Result<Self> {
        if let Some(a) = alpha {
            self.alpha = a;
        }
        if let Some(b) = beta {
            self.beta = b;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.variant == Variant::Wpz && self.beta == 1.0 {
            return Err(Error::Config("wpz with beta = 1 ignores the support set".into()));
        }
        if !self.variant.projected() && self.d_proj.is_some() {
            return Err(Error::Config(format!("{} has no projection", self.variant)));
        }
        Ok(())
    }

    pub fn needs_label_semantics(&self) -> bool {
        self.alpha > 0.0
    }
}

/// Everything needed to score query tokens of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeBindings<T: Scalar> {
    pub prototypes: DMatrix<T>,
    pub present: Vec<bool>,
    pub psi: DMatrix<T>,
    pub omega: DMatrix<T>,
    /// `None` for the unprojected scorers.
    pub projection: Option<DMatrix<T>>,
    /// `omega * M`, cached.
    projected_omega: DMatrix<T>,
    alpha: T,
    beta: T,
}

impl<T: Scalar> EpisodeBindings<T> {
    /// `phi` and `semantics` are `L x D`, already in label order.
    pub fn build(
        cfg: &ScorerConfig,
        phi: &DMatrix<T>,
        semantics: &DMatrix<T>,
        prototypes: DMatrix<T>,
        present: Vec<bool>,
    ) -> Result<Self> {
        Self::build_with_projection(cfg, phi, semantics, prototypes, present, None)
    }

    /// As [`build`](Self::build), but reuses `fixed` as the projection instead of solving for it.
    pub fn build_with_projection(
        cfg: &ScorerConfig,
        phi: &DMatrix<T>,
        semantics: &DMatrix<T>,
        prototypes: DMatrix<T>,
        present: Vec<bool>,
        fixed: Option<&DMatrix<T>>,
    ) -> Result<Self> {
        let (l, dim) = phi.shape();
        for (what, m) in [("label semantics", semantics), ("prototypes", &prototypes)] {
            if m.shape() != (l, dim) {
                return Err(Error::Config(format!(
                    "{what} are {}x{}, expected {l}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let alpha = T::of(cfg.alpha);
        let beta = T::of(cfg.beta);
        let psi = enhanced_references(phi, semantics, alpha);
        let omega = label_representations(&prototypes, &present, &psi, beta);
        let projection = match (cfg.variant.projected(), fixed) {
            (false, _) => None,
            (true, Some(m)) => Some(m.clone()),
            (true, None) => Some(error_nulling_projection(&psi, &prototypes, &present, cfg.d_proj)?),
        };
        let projected_omega = match &projection {
            Some(m) => &omega * m,
            None => omega.clone(),
        };
        Ok(EpisodeBindings {
            prototypes,
            present,
            psi,
            omega,
            projection,
            projected_omega,
            alpha,
            beta,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.omega.nrows()
    }

    /// Pre-softmax similarities, `n x L`.
    pub fn logits(&self, query: &DMatrix<T>) -> DMatrix<T> {
        match &self.projection {
            Some(m) => (query * m) * self.projected_omega.transpose(),
            None => DMatrix::from_fn(query.nrows(), self.omega.nrows(), |i, j| {
                -(query.row(i) - self.omega.row(j)).norm_squared()
            }),
        }
    }

    /// Log-probability emission matrix, `n x L`.
    pub fn emission_scores(&self, query: &DMatrix<T>) -> DMatrix<T> {
        log_softmax_rows(&self.logits(query))
    }

    /// Gradient with respect to each label's reference vector (`L x D`) given the
    /// gradient with respect to the emission matrix, holding the projection fixed.
    pub fn reference_gradient(&self, query: &DMatrix<T>, d_emission: &DMatrix<T>) -> DMatrix<T> {
        let emission = self.emission_scores(query);
        // back through log-softmax
        let mut d_logits = d_emission.clone();
        for i in 0..d_logits.nrows() {
            let total: T = d_emission.row(i).iter().copied().sum();
            for j in 0..d_logits.ncols() {
                d_logits[(i, j)] -= emission[(i, j)].exp() * total;
            }
        }
        let d_omega = match &self.projection {
            Some(m) => d_logits.transpose() * (query * m) * m.transpose(),
            None => {
                let mut g = DMatrix::zeros(self.omega.nrows(), self.omega.ncols());
                for i in 0..query.nrows() {
                    for j in 0..self.omega.nrows() {
                        let diff = query.row(i) - self.omega.row(j);
                        let mut row = g.row_mut(j);
                        row += diff * (T::of(2.0) * d_logits[(i, j)]);
                    }
                }
                g
            }
        };
        let mut d_phi = d_omega;
        let via_psi = T::one() - self.alpha;
        for (j, &p) in self.present.iter().enumerate() {
            let factor = if p { self.beta * via_psi } else { via_psi };
            let mut row = d_phi.row_mut(j);
            row *= factor;
        }
        d_phi
    }
}
