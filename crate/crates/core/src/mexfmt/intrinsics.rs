//! Signatures of the `rt::` runtime intrinsics.
//!
//! MEX source never declares these; the verifier resolves calls against
//! this table and the interpreter implements them natively.

use super::{MethodRef, MethodSig, MexType};

#[derive(Debug, Clone)]
pub struct Intrinsic {
    pub class: &'static str,
    pub name: &'static str,
    pub params: &'static [MexType],
    pub ret: MexType,
}

impl Intrinsic {
    pub fn method_ref(&self) -> MethodRef {
        MethodRef::new(self.class, self.name)
    }

    pub fn signature(&self) -> MethodSig {
        MethodSig {
            method: self.method_ref(),
            params: self.params.to_vec(),
            ret: self.ret.clone(),
        }
    }
}

const fn intr(
    class: &'static str,
    name: &'static str,
    params: &'static [MexType],
    ret: MexType,
) -> Intrinsic {
    Intrinsic {
        class,
        name,
        params,
        ret,
    }
}

use MexType::{Int, Str, Void};

pub static INTRINSICS: &[Intrinsic] = &[
    // sensitive data
    intr("rt::Telephony", "getDeviceId", &[], Str),
    intr("rt::Telephony", "getLine1Number", &[], Str),
    intr("rt::Location", "getLatitude", &[], Int),
    intr("rt::Location", "getLongitude", &[], Int),
    intr("rt::Contacts", "read", &[], Str),
    // outbound channels
    intr("rt::Log", "d", &[Str], Void),
    intr("rt::Net", "send", &[Str], Void),
    intr("rt::Net", "sendInt", &[Int], Void),
    intr("rt::Sms", "send", &[Str, Str], Void),
    // permission-protected platform calls
    intr("rt::Wifi", "isEnabled", &[], Int),
    intr("rt::Wifi", "getConfiguredNetworks", &[], Str),
    intr("rt::Camera", "open", &[], Void),
    intr("rt::Bluetooth", "enable", &[], Int),
    // string helpers
    intr("rt::Str", "length", &[Str], Int),
    intr("rt::Str", "fromInt", &[Int], Str),
];

pub fn lookup(method: &MethodRef) -> Option<&'static Intrinsic> {
    INTRINSICS
        .iter()
        .find(|i| i.class == method.class && i.name == method.name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_namespaced() {
        for (i, a) in INTRINSICS.iter().enumerate() {
            assert!(a.class.starts_with(crate::mexfmt::INTRINSIC_PREFIX));
            for b in &INTRINSICS[i + 1..] {
                assert!(a.class != b.class || a.name != b.name);
            }
        }
    }

    #[test]
    fn lookup_by_reference() {
        let sig = lookup(&MethodRef::new("rt::Log", "d")).unwrap().signature();
        assert_eq!(sig.to_string(), "rt::Log.d(str)->void");
        assert!(lookup(&MethodRef::new("rt::Log", "e")).is_none());
    }
}
