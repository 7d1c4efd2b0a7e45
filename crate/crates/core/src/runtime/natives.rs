use crate::mexfmt::MethodRef;

use super::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Native {
    DeviceId,
    Line1Number,
    Latitude,
    Longitude,
    Contacts,
    LogD,
    NetSend,
    NetSendInt,
    SmsSend,
    WifiEnabled,
    WifiNetworks,
    CameraOpen,
    BluetoothEnable,
    StrLength,
    StrFromInt,
}

/// Value returned by `rt::Telephony.getDeviceId`.
pub const DEVICE_ID: &str = "358240051111110";
pub const LINE1_NUMBER: &str = "+15555550100";

impl Native {
    pub(crate) fn resolve(m: &MethodRef) -> Option<Native> {
        use Native::*;
        Some(match (m.class.as_str(), m.name.as_str()) {
            ("rt::Telephony", "getDeviceId") => DeviceId,
            ("rt::Telephony", "getLine1Number") => Line1Number,
            ("rt::Location", "getLatitude") => Latitude,
            ("rt::Location", "getLongitude") => Longitude,
            ("rt::Contacts", "read") => Contacts,
            ("rt::Log", "d") => LogD,
            ("rt::Net", "send") => NetSend,
            ("rt::Net", "sendInt") => NetSendInt,
            ("rt::Sms", "send") => SmsSend,
            ("rt::Wifi", "isEnabled") => WifiEnabled,
            ("rt::Wifi", "getConfiguredNetworks") => WifiNetworks,
            ("rt::Camera", "open") => CameraOpen,
            ("rt::Bluetooth", "enable") => BluetoothEnable,
            ("rt::Str", "length") => StrLength,
            ("rt::Str", "fromInt") => StrFromInt,
            _ => return None,
        })
    }

    /// Outbound channels record their arguments instead of returning data.
    pub(crate) fn is_outbound(self) -> bool {
        matches!(
            self,
            Native::LogD | Native::NetSend | Native::NetSendInt | Native::SmsSend
        )
    }

    pub(crate) fn call(self, args: &[Value]) -> Value {
        use Native::*;
        match self {
            DeviceId => Value::str(DEVICE_ID),
            Line1Number => Value::str(LINE1_NUMBER),
            Latitude => Value::Int(52),
            Longitude => Value::Int(13),
            Contacts => Value::str("alice:555-0100"),
            WifiEnabled | BluetoothEnable => Value::Int(1),
            WifiNetworks => Value::str("home,office"),
            StrLength => Value::Int(args[0].as_str().chars().count() as i64),
            StrFromInt => Value::str(&args[0].as_int().to_string()),
            LogD | NetSend | NetSendInt | SmsSend | CameraOpen => Value::Void,
        }
    }
}
