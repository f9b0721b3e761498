//! Vector-valued functions on (subsets of) `R^n`, represented by evaluator
//! closures. Extension operators return sums of compositions of these, so a
//! closure representation is used rather than symbolic output.

use std::fmt;
use std::sync::Arc;

use crate::expr::Expr;
use crate::linalg::Vector;

type Eval = dyn Fn(&Vector) -> Vector + Send + Sync;
type Deriv = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;

/// Step for central-difference directional derivatives.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone)]
pub struct Field {
    domain_dim: usize,
    codomain_dim: usize,
    eval: Arc<Eval>,
    derivative: Option<Arc<Deriv>>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("domain_dim", &self.domain_dim)
            .field("codomain_dim", &self.codomain_dim)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl Field {
    pub fn new<F>(domain_dim: usize, codomain_dim: usize, eval: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Field {
            domain_dim,
            codomain_dim,
            eval: Arc::new(eval),
            derivative: None,
        }
    }

    /// Scalar field from a real-valued closure.
    pub fn scalar<F>(domain_dim: usize, f: F) -> Self
    where
        F: Fn(&Vector) -> f64 + Send + Sync + 'static,
    {
        Field::new(domain_dim, 1, move |x| Vector::from_element(1, f(x)))
    }

    /// Attach an exact directional derivative `(x, v) -> df(x)·v`.
    pub fn with_derivative<D>(mut self, d: D) -> Self
    where
        D: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn zero(domain_dim: usize, codomain_dim: usize) -> Self {
        Field::new(domain_dim, codomain_dim, move |_| Vector::zeros(codomain_dim))
            .with_derivative(move |_, _| Vector::zeros(codomain_dim))
    }

    pub fn constant(domain_dim: usize, value: Vector) -> Self {
        let m = value.len();
        Field::new(domain_dim, m, move |_| value.clone()).with_derivative(move |_, _| Vector::zeros(m))
    }

    /// Field whose components are the given expressions; derivatives are symbolic.
    pub fn from_exprs(domain_dim: usize, components: Vec<Expr>) -> Self {
        let m = components.len();
        let grads: Vec<Vec<Expr>> = components
            .iter()
            .map(|e| (0..domain_dim).map(|k| e.derivative(k)).collect())
            .collect();
        let comps = Arc::new(components);
        let grads = Arc::new(grads);
        let c2 = Arc::clone(&comps);
        Field::new(domain_dim, m, move |x| {
            let xs = x.as_slice();
            Vector::from_iterator(m, c2.iter().map(|e| e.eval(xs)))
        })
        .with_derivative(move |x, v| {
            let xs = x.as_slice();
            Vector::from_iterator(
                m,
                grads
                    .iter()
                    .map(|g| g.iter().zip(v.iter()).map(|(e, vk)| e.eval(xs) * vk).sum::<f64>()),
            )
        })
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// `df(x)·v`, exact when supplied, central difference otherwise.
    pub fn directional_derivative(&self, x: &Vector, v: &Vector) -> Vector {
        match &self.derivative {
            Some(d) => d(x, v),
            None => self.finite_difference(x, v, FD_STEP),
        }
    }

    pub fn finite_difference(&self, x: &Vector, v: &Vector, h: f64) -> Vector {
        (self.eval(&(x + v * h)) - self.eval(&(x - v * h))) / (2.0 * h)
    }

    /// Pointwise `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &Field, b: f64) -> Field {
        let (f, g) = (self.clone(), other.clone());
        Field::new(self.domain_dim, self.codomain_dim, move |x| f.eval(x) * a + g.eval(x) * b)
    }

    pub fn scaled(&self, c: f64) -> Field {
        let f = self.clone();
        let out = Field::new(self.domain_dim, self.codomain_dim, move |x| f.eval(x) * c);
        match &self.derivative {
            Some(d) => {
                let d = Arc::clone(d);
                out.with_derivative(move |x, v| d(x, v) * c)
            }
            None => out,
        }
    }

    /// Pointwise product with a scalar function.
    pub fn multiplied_by(&self, scale: &Field) -> Field {
        assert_eq!(scale.codomain_dim, 1, "scale must be scalar-valued");
        let (f, s) = (self.clone(), scale.clone());
        Field::new(self.domain_dim, self.codomain_dim, move |x| f.eval(x) * s.eval(x)[0])
    }

    /// `self ∘ map`, where `map` sends `R^k` into this field's domain.
    pub fn compose<G>(&self, new_domain_dim: usize, map: G) -> Field
    where
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        let f = self.clone();
        Field::new(new_domain_dim, self.codomain_dim, move |x| f.eval(&map(x)))
    }

    /// Component `k` as a scalar field.
    pub fn component(&self, k: usize) -> Field {
        let f = self.clone();
        Field::new(self.domain_dim, 1, move |x| Vector::from_element(1, f.eval(x)[k]))
    }

    /// Stack scalar fields into one vector field.
    pub fn stack(components: &[Field]) -> Field {
        let dim = components.first().map_or(0, |c| c.domain_dim);
        let comps: Vec<Field> = components.to_vec();
        let m = comps.len();
        Field::new(dim, m, move |x| Vector::from_iterator(m, comps.iter().map(|c| c.eval(x)[0])))
    }
}
