pub mod actors;
pub mod amount;
pub mod canonical;
pub mod codec;
pub mod crypto;
pub mod incentives;
pub mod ledger;
pub mod netsim;
