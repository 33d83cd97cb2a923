//! Comparison models and feature selectors: logistic regression, linear
//! LASSO, second-order boosted trees and a random forest.

pub mod forest;
pub mod gbt;
pub mod lasso;
pub mod logistic;

pub use forest::{fit_random_forest, RfModel, RfParams};
pub use gbt::{fit_gbt, gbt_importance, GbtModel, GbtParams};
pub use lasso::{fit_lasso, lasso_selected, LassoModel};
pub use logistic::{fit_logistic, LogisticModel, LogisticParams};

/// Sets model feature names after a fit on a bare matrix.
pub trait NamedFeatures {
    fn set_feature_names(&mut self, names: Vec<String>);
}

macro_rules! named {
    ($($t:ty),*) => {$(
        impl NamedFeatures for $t {
            fn set_feature_names(&mut self, names: Vec<String>) {
                debug_assert_eq!(names.len(), self.feature_names.len());
                self.feature_names = names;
            }
        }
    )*};
}

named!(LogisticModel, LassoModel, GbtModel, RfModel);
